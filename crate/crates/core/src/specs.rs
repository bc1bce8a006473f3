//! JSON spec files for kernels, laws and problems.
//!
//! Matrices may be given inline as a number (a multiple of the identity), a
//! list of rows whose entries are numbers or `[re, im]` pairs, or, for
//! kernel coefficients, a flat row-major list of `d²` `[re, im]` pairs.
//! Operator matrices may also be a path to a headerless CSV file whose
//! entries are real or complex numbers such as `1.5-2i`.
//!
//! Relative paths are resolved against the directory of the file that
//! mentions them.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kernel_lab::{ExpTerm, Kernel, KernelForm};
use crate::linalg::{c, CMat, CVec, C64};
use crate::material_law::{Affine, AffineBlock, LawKind, MaterialLaw};
use crate::spectral_solver::{
    build_history_rhs, build_ivp_rhs, BlockOperator, DeltaSource, DeltaWeight, EvolutionaryProblem, OperatorMode,
    RhsParts,
};
use crate::volterra_oracle::SteppingConfig;
use crate::weighted_time::{read_csv, write_csv, TimeGrid, WeightedSignal};

pub const SCHEMA: u32 = 1;

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn read_json(path: &Path) -> Result<Value> {
    let f = File::open(path).map_err(|e| invalid(format!("cannot open {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn entry(v: &Value) -> Result<C64> {
    match v {
        Value::Number(n) => Ok(c(n.as_f64().ok_or_else(|| invalid("bad number"))?)),
        Value::Array(p) if p.len() == 2 => {
            let re = p[0].as_f64().ok_or_else(|| invalid("bad real part"))?;
            let im = p[1].as_f64().ok_or_else(|| invalid("bad imaginary part"))?;
            Ok(C64::new(re, im))
        }
        Value::String(s) => s.trim().parse::<C64>().map_err(|_| invalid(format!("bad complex number {s:?}"))),
        _ => Err(invalid(format!("expected a number or [re, im], got {v}"))),
    }
}

fn is_pair(v: &Value) -> bool {
    matches!(v, Value::Array(p) if p.len() == 2 && p.iter().all(Value::is_number))
}

/// Parses a matrix value; `square` is the expected side when known.
pub fn parse_matrix(v: &Value, square: Option<usize>) -> Result<CMat> {
    match v {
        Value::Number(_) => {
            let d = square.ok_or_else(|| invalid("a scalar matrix needs a known dimension"))?;
            Ok(CMat::identity(d, d) * entry(v)?)
        }
        Value::Array(items) => {
            // a flat row-major list of d² pairs; unambiguous since d² ≠ d for d ≥ 2,
            // and for d = 1 the row reading would not be square
            if let Some(d) = square {
                if items.len() == d * d && items.iter().all(is_pair) {
                    let flat = items.iter().map(entry).collect::<Result<Vec<_>>>()?;
                    return Ok(CMat::from_row_slice(d, d, &flat));
                }
            }
            let rows: Vec<Vec<C64>> = items
                .iter()
                .map(|row| match row {
                    Value::Array(r) => r.iter().map(entry).collect::<Result<Vec<_>>>(),
                    _ => Err(invalid("matrix rows must be arrays")),
                })
                .collect::<Result<_>>()?;
            let nr = rows.len();
            let nc = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != nc) {
                return Err(invalid("ragged matrix rows"));
            }
            if let Some(d) = square {
                if (nr, nc) != (d, d) {
                    return Err(Error::DimensionMismatch { context: "matrix spec", expected: d, got: nr });
                }
            }
            Ok(CMat::from_fn(nr, nc, |i, j| rows[i][j]))
        }
        _ => Err(invalid(format!("expected a matrix, got {v}"))),
    }
}

/// Headerless CSV of complex or real entries.
pub fn read_matrix_csv(path: &Path) -> Result<CMat> {
    let f = File::open(path).map_err(|e| invalid(format!("cannot open {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(f);
    let mut rows: Vec<Vec<C64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|s| s.parse::<C64>().map_err(|_| invalid(format!("bad matrix entry {s:?} in {}", path.display()))))
                .collect::<Result<_>>()?,
        );
    }
    let nc = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != nc) {
        return Err(invalid(format!("{} is not a rectangular matrix", path.display())));
    }
    Ok(CMat::from_fn(rows.len(), nc, |i, j| rows[i][j]))
}

fn matrix_or_path(v: &Value, base: &Path, square: Option<usize>) -> Result<CMat> {
    match v {
        Value::String(p) => {
            let m = read_matrix_csv(&resolve(base, p))?;
            if let Some(d) = square {
                if m.shape() != (d, d) {
                    return Err(Error::DimensionMismatch { context: "matrix file", expected: d, got: m.nrows() });
                }
            }
            Ok(m)
        }
        _ => parse_matrix(v, square),
    }
}

pub fn parse_vector(v: &Value) -> Result<CVec> {
    match v {
        Value::Array(items) => Ok(CVec::from_vec(items.iter().map(entry).collect::<Result<_>>()?)),
        _ => Ok(CVec::from_element(1, entry(v)?)),
    }
}

fn matrix_json(m: &CMat) -> Value {
    Value::Array(
        (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| serde_json::json!([m[(i, j)].re, m[(i, j)].im]))
            .collect(),
    )
}

/// Kernel from a JSON value: `{"dim", "form": "expsum", "terms": [{"K", "a"}]}`,
/// `{"form": "sampled", "dt", "values": <csv path>, "mu"}` or
/// `{"form": "zero", "dim"}`.
pub fn kernel_from_value(v: &Value, base: &Path) -> Result<Kernel> {
    if let Value::String(p) = v {
        let path = resolve(base, p);
        return kernel_from_value(&read_json(&path)?, &parent(&path));
    }
    let form = v.get("form").and_then(Value::as_str).unwrap_or("expsum");
    let dim = v.get("dim").and_then(Value::as_u64).map(|d| d as usize);
    match form {
        "zero" => Ok(Kernel::zero(dim.ok_or_else(|| invalid("zero kernel needs \"dim\""))?)),
        "expsum" => {
            let d = dim.ok_or_else(|| invalid("exponential-sum kernel needs \"dim\""))?;
            let terms = v.get("terms").and_then(Value::as_array).ok_or_else(|| invalid("kernel needs \"terms\""))?;
            let terms = terms
                .iter()
                .map(|t| {
                    let k = t.get("K").ok_or_else(|| invalid("kernel term needs \"K\""))?;
                    let a = t.get("a").and_then(Value::as_f64).ok_or_else(|| invalid("kernel term needs rate \"a\""))?;
                    Ok(ExpTerm { coeff: parse_matrix(k, Some(d))?, rate: a })
                })
                .collect::<Result<Vec<_>>>()?;
            Kernel::exp_sum(d, terms)
        }
        "sampled" => {
            let dt = v.get("dt").and_then(Value::as_f64).ok_or_else(|| invalid("sampled kernel needs \"dt\""))?;
            let mu = v.get("mu").and_then(Value::as_f64).unwrap_or(0.0);
            let path = v.get("values").and_then(Value::as_str).ok_or_else(|| invalid("sampled kernel needs a \"values\" CSV path"))?;
            let path = resolve(base, path);
            let f = File::open(&path).map_err(|e| invalid(format!("cannot open {}: {e}", path.display())))?;
            let sig = read_csv(f, 1.0)?;
            let d2 = sig.dim();
            let d = (d2 as f64).sqrt().round() as usize;
            if d * d != d2 || dim.is_some_and(|x| x != d) {
                return Err(invalid(format!("sampled kernel CSV has {d2} components, not a square of \"dim\"")));
            }
            if (sig.grid.dt - dt).abs() > 1e-9 * dt {
                return Err(invalid(format!("sampled kernel CSV step {} differs from dt = {dt}", sig.grid.dt)));
            }
            let values = (0..sig.len()).map(|j| CMat::from_row_slice(d, d, sig.values.row(j).transpose().as_slice())).collect();
            Kernel::sampled(dt, values, mu)
        }
        other => Err(invalid(format!("unknown kernel form {other:?}"))),
    }
}

/// JSON for an exponential-sum or zero kernel.
pub fn kernel_to_value(k: &Kernel) -> Result<Value> {
    match &k.form {
        KernelForm::ExpSum(terms) if terms.is_empty() => Ok(serde_json::json!({"dim": k.dim, "form": "zero"})),
        KernelForm::ExpSum(terms) => Ok(serde_json::json!({
            "dim": k.dim,
            "form": "expsum",
            "terms": terms.iter().map(|t| serde_json::json!({"K": matrix_json(&t.coeff), "a": t.rate})).collect::<Vec<_>>(),
        })),
        KernelForm::Sampled { .. } => Err(Error::Unsupported("sampled kernels are written as CSV plus a spec".into())),
    }
}

fn optional_kernel(v: &Value, key: &str, base: &Path, dim: Option<usize>) -> Result<Option<Kernel>> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(dim.map(Kernel::zero)),
        Some(k) => kernel_from_value(k, base).map(Some),
    }
}

fn affine(v: Option<&Value>, default: Affine) -> Result<Affine> {
    match v {
        None => Ok(default),
        Some(Value::Array(p)) if p.len() == 2 => Ok(Affine::new(
            p[0].as_f64().ok_or_else(|| invalid("bad affine constant"))?,
            p[1].as_f64().ok_or_else(|| invalid("bad affine slope"))?,
        )),
        Some(other) => Err(invalid(format!("affine map must be [constant, slope], got {other}"))),
    }
}

/// Law from a JSON value or path: `{"kind", "b", "c", "d0", "d1"}` with
/// kernels inline or by path; omitted kernels are zero (then `d0`/`d1`
/// give the dimensions). Custom affine laws list four `blocks`, each
/// `{"p": [a, b], "q": [a, b], "b": kernel, "c": kernel}`.
pub fn law_from_value(v: &Value, base: &Path) -> Result<MaterialLaw> {
    if let Value::String(p) = v {
        let path = resolve(base, p);
        return law_from_value(&read_json(&path)?, &parent(&path));
    }
    let kind = v.get("kind").and_then(Value::as_str).ok_or_else(|| invalid("law needs \"kind\""))?;
    let d0 = v.get("d0").and_then(Value::as_u64).map(|d| d as usize);
    let d1 = v.get("d1").and_then(Value::as_u64).map(|d| d as usize);
    let pair = |bdim: Option<usize>, cdim: Option<usize>| -> Result<(Kernel, Kernel)> {
        let b = optional_kernel(v, "b", base, bdim)?;
        let ck = optional_kernel(v, "c", base, cdim)?;
        match (b, ck) {
            (Some(b), Some(ck)) => Ok((b, ck)),
            (Some(b), None) => Ok((b.clone(), Kernel::zero(if kind == "vlasov" { b.dim } else { d0.ok_or_else(|| invalid("law needs \"c\" or \"d0\""))? }))),
            (None, Some(ck)) => Ok((Kernel::zero(if kind == "vlasov" { ck.dim } else { d1.ok_or_else(|| invalid("law needs \"b\" or \"d1\""))? }), ck)),
            (None, None) => Err(invalid("law needs kernels or dimensions")),
        }
    };
    match kind {
        "hyperbolic" => {
            let (b, ck) = pair(d1, d0)?;
            MaterialLaw::hyperbolic(b, ck)
        }
        "parabolic" => {
            let (b, ck) = pair(d1, d0)?;
            MaterialLaw::parabolic(b, ck)
        }
        "vlasov" => {
            let d = d0.or(d1);
            let (b, ck) = pair(d, d)?;
            MaterialLaw::vlasov(b, ck)
        }
        "custom_affine" => {
            let (d0, d1) = (d0.ok_or_else(|| invalid("custom law needs \"d0\""))?, d1.ok_or_else(|| invalid("custom law needs \"d1\""))?);
            let blocks = v.get("blocks").and_then(Value::as_array).ok_or_else(|| invalid("custom law needs four \"blocks\""))?;
            if blocks.len() != 4 {
                return Err(invalid("custom law needs exactly four blocks"));
            }
            let parsed = blocks
                .iter()
                .enumerate()
                .map(|(i, blk)| {
                    let zero = i >= 2;
                    Ok(AffineBlock {
                        p: affine(blk.get("p"), if zero { Affine::ZERO } else { Affine::ONE })?,
                        q: affine(blk.get("q"), Affine::ONE)?,
                        b: optional_kernel(blk, "b", base, None)?,
                        c: optional_kernel(blk, "c", base, None)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let arr: [AffineBlock; 4] = parsed.try_into().map_err(|_| invalid("custom law needs exactly four blocks"))?;
            MaterialLaw::custom_affine(d0, d1, arr)
        }
        other => Err(invalid(format!("unknown law kind {other:?}"))),
    }
}

/// JSON for a law with exponential-sum kernels.
pub fn law_to_value(law: &MaterialLaw) -> Result<Value> {
    match &law.kind {
        LawKind::Hyperbolic { b, c } | LawKind::Parabolic { b, c } | LawKind::Vlasov { b, c } => Ok(serde_json::json!({
            "kind": law.kind_name(),
            "b": kernel_to_value(b)?,
            "c": kernel_to_value(c)?,
        })),
        LawKind::CustomAffine { .. } => Err(Error::Unsupported("custom laws are written by hand".into())),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub a: Value,
    #[serde(default = "default_mode")]
    pub mode: OperatorMode,
    #[serde(default)]
    pub w0: Option<Value>,
    #[serde(default)]
    pub w1: Option<Value>,
}

fn default_mode() -> OperatorMode {
    OperatorMode::SkewBlock
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RhsSpec {
    /// Signal CSV in the solver's format, on the problem grid.
    File { path: String },
    /// Initial values; `q0` may be omitted for first-order laws.
    Delta {
        v0: Value,
        #[serde(default)]
        q0: Option<Value>,
    },
    /// History signals (CSV), supported in `t ≤ 0`.
    History { v: String, q: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub law: Value,
    pub operator: OperatorSpec,
    pub grid: TimeGrid,
    pub nu: f64,
    pub rhs: Vec<RhsSpec>,
    #[serde(default)]
    pub stepping: Option<SteppingConfig>,
}

fn default_schema() -> u32 {
    SCHEMA
}

/// A problem read from disk together with what the oracle needs.
#[derive(Clone, Debug)]
pub struct LoadedProblem {
    pub problem: EvolutionaryProblem,
    pub initial: Option<(CVec, Option<CVec>)>,
    pub forcing: Option<WeightedSignal>,
    pub has_history: bool,
    pub stepping: Option<SteppingConfig>,
}

pub fn operator_from_spec(spec: &OperatorSpec, base: &Path) -> Result<BlockOperator> {
    let a = matrix_or_path(&spec.a, base, None)?;
    match spec.mode {
        OperatorMode::SelfadjointPositive => BlockOperator::selfadjoint_positive(a),
        OperatorMode::SkewBlock => match (&spec.w0, &spec.w1) {
            (None, None) => Ok(BlockOperator::skew(a)),
            (w0, w1) => {
                let (d1, d0) = a.shape();
                let w0 = match w0 {
                    Some(w) => matrix_or_path(w, base, Some(d0))?,
                    None => CMat::identity(d0, d0),
                };
                let w1 = match w1 {
                    Some(w) => matrix_or_path(w, base, Some(d1))?,
                    None => CMat::identity(d1, d1),
                };
                BlockOperator::weighted(a, w0, w1)
            }
        },
    }
}

fn read_signal(path: &Path, nu: f64) -> Result<WeightedSignal> {
    let f = File::open(path).map_err(|e| invalid(format!("cannot open {}: {e}", path.display())))?;
    read_csv(f, nu)
}

pub fn load_problem(path: &Path) -> Result<LoadedProblem> {
    let spec: ProblemSpec = serde_json::from_value(read_json(path)?)?;
    problem_from_spec(&spec, &parent(path))
}

pub fn problem_from_spec(spec: &ProblemSpec, base: &Path) -> Result<LoadedProblem> {
    if spec.schema != SCHEMA {
        return Err(invalid(format!("unsupported schema {} (expected {SCHEMA})", spec.schema)));
    }
    if spec.rhs.is_empty() {
        return Err(invalid("problem needs at least one right-hand side"));
    }
    let law = law_from_value(&spec.law, base)?;
    let op = operator_from_spec(&spec.operator, base)?;
    let (d0, d1) = law.dims;
    let mut problem = EvolutionaryProblem::new(law.clone(), op, spec.nu, spec.grid)?;
    let mut initial = None;
    let mut forcing: Option<WeightedSignal> = None;
    let mut has_history = false;
    for rhs in &spec.rhs {
        match rhs {
            RhsSpec::File { path } => {
                let sig = read_signal(&resolve(base, path), spec.nu)?;
                if sig.grid != spec.grid {
                    return Err(invalid(format!("{path}: signal grid differs from the problem grid")));
                }
                forcing = Some(match forcing {
                    Some(f) => f.add(&sig)?,
                    None => sig.clone(),
                });
                problem = problem.with_time_rhs(sig)?;
            }
            RhsSpec::Delta { v0, q0 } => {
                let v0 = parse_vector(v0)?;
                let q0 = q0.as_ref().map(parse_vector).transpose()?;
                if matches!(law.kind, LawKind::Hyperbolic { .. }) {
                    let q = q0.clone().unwrap_or_else(|| CVec::zeros(d1));
                    problem = problem.with_parts(build_ivp_rhs(&law, &v0, &q, None)?)?;
                } else {
                    if v0.len() != d0 || q0.as_ref().is_some_and(|q| q.norm() > 0.0) {
                        return Err(invalid("first-order laws take an initial value for the first block only"));
                    }
                    let mut x = CVec::zeros(d0 + d1);
                    x.rows_mut(0, d0).copy_from(&v0);
                    problem = problem.with_parts(RhsParts { time: None, delta: Some(DeltaSource { x, weight: DeltaWeight::Material }) })?;
                }
                initial = Some((v0, q0));
            }
            RhsSpec::History { v, q } => {
                let vh = read_signal(&resolve(base, v), spec.nu)?;
                let qh = read_signal(&resolve(base, q), spec.nu)?;
                problem = problem.with_parts(build_history_rhs(&law, &vh, &qh, None)?)?;
                has_history = true;
            }
        }
    }
    Ok(LoadedProblem { problem, initial, forcing, has_history, stepping: spec.stepping.clone() })
}

pub fn write_signal(u: &WeightedSignal, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| invalid(format!("cannot create {}: {e}", path.display())))?;
    write_csv(u, std::io::BufWriter::new(f))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| invalid(format!("cannot write {}: {e}", path.display())))
}
