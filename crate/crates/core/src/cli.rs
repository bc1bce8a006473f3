//! The `integro` command line.
//!
//! Exit codes: 0 success or pass, 1 usage or configuration error,
//! 2 failed certificate or comparison above tolerance, 3 numerical failure.
//!
//! Settings come from built-in defaults, then an optional config file
//! (`--config`, JSON with `"schema": 1`), then command-line flags.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::kernel_lab::{check_hypotheses, HypothesisReport, Kernel, SampleSpec};
use crate::material_law::{certify, LawKind, MaterialLaw};
use crate::spectral_solver::{solve, Solution};
use crate::specs::{law_from_value, load_problem, write_json, write_signal, LoadedProblem, SCHEMA};
use crate::viscoelastic::{run_demo, DemoConfig};
use crate::volterra_oracle::{
    augmented, compare, step_first_order, step_hyperbolic, Comparison, Scheme, SteppingConfig, TimeSeries,
};
use crate::weighted_time::WeightedSignal;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Weighted-L₂ relative error allowed by `compare`.
    pub compare: f64,
    pub residual: f64,
    pub causality: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { compare: 1e-3, residual: 1e-8, causality: 1e-8 }
    }
}

/// All defaults in one place; see the README for the schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema: u32,
    pub output_dir: PathBuf,
    /// Weight used by `certify`.
    pub nu: f64,
    pub sampling: SampleSpec,
    pub tolerances: Tolerances,
    /// Oracle stepping when the problem file has no `stepping` section.
    pub stepping: SteppingConfig,
    pub demo: DemoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA,
            output_dir: PathBuf::from("integro-out"),
            nu: 1.0,
            sampling: SampleSpec::default(),
            tolerances: Tolerances::default(),
            stepping: SteppingConfig::new(1e-3, 10.0),
            demo: DemoConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::InvalidInput(format!("unsupported config schema {} (expected {SCHEMA})", self.schema)));
        }
        let t = &self.tolerances;
        if [t.compare, t.residual, t.causality, self.nu].iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput("tolerances and nu must be positive".into()));
        }
        self.sampling.validate()
    }
}

#[derive(Parser, Debug)]
#[command(name = "integro", version, about = "Certify, solve and cross-check evolutionary equations with memory")]
pub struct Cli {
    /// JSON config file (schema 1).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check kernel hypotheses and sample the positivity constant of a law.
    Certify(CertifyArgs),
    /// Solve a problem in the frequency domain.
    Solve(ProblemArgs),
    /// Step a problem in the time domain.
    Oracle(OracleArgs),
    /// Solve both ways and report the discrepancy.
    Compare(CompareArgs),
    /// Run the one-dimensional visco-elastic example.
    DemoVisco(DemoArgs),
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    /// Law spec file.
    #[arg(long)]
    pub law: PathBuf,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub t_min: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ProblemArgs {
    /// Problem spec file.
    #[arg(long)]
    pub problem: PathBuf,
    /// Overrides the problem's weight.
    #[arg(long)]
    pub nu: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SteppingArgs {
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// implicit_midpoint or implicit_euler.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Use the exact state-space reduction (exponential-sum kernels only)
    /// with this many substeps per step.
    #[arg(long)]
    pub augmented: Option<usize>,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub stepping: SteppingArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub stepping: SteppingArgs,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    /// Interior node count.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Skip the spectral cross-check.
    #[arg(long)]
    pub no_spectral: bool,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

/// Failure carrying the exit code and the module it came from.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub module: &'static str,
    pub message: String,
}

impl Failure {
    fn from_error(module: &'static str, e: Error) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE };
        Self { code, module, message: e.to_string() }
    }
}

trait Context<T> {
    fn module(self, module: &'static str) -> std::result::Result<T, Failure>;
}

impl<T> Context<T> for Result<T> {
    fn module(self, module: &'static str) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure::from_error(module, e))
    }
}

type Outcome = std::result::Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("integro: {} error: {}", f.module, f.message);
            f.code
        }
    }
}

pub fn execute(cli: &Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).module("config")?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(Error::from)
        .module("cli")?;
    match &cli.command {
        Command::Certify(a) => run_certify(a, cfg),
        Command::Solve(a) => run_solve(a, &cfg),
        Command::Oracle(a) => run_oracle(a, &cfg),
        Command::Compare(a) => run_compare(a, &cfg),
        Command::DemoVisco(a) => run_demo_visco(a, cfg),
    }
}

fn positive(x: f64, what: &str) -> std::result::Result<f64, Failure> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Failure { code: EXIT_USAGE, module: "cli", message: format!("{what} must be positive, got {x}") })
    }
}

fn law_kernels(law: &MaterialLaw) -> Vec<(&'static str, &Kernel)> {
    match &law.kind {
        LawKind::Hyperbolic { b, c } | LawKind::Parabolic { b, c } | LawKind::Vlasov { b, c } => vec![("b", b), ("c", c)],
        LawKind::CustomAffine { blocks } => {
            const NAMES: [[&str; 2]; 4] = [["block0.b", "block0.c"], ["block1.b", "block1.c"], ["block2.b", "block2.c"], ["block3.b", "block3.c"]];
            blocks
                .iter()
                .zip(NAMES.iter())
                .flat_map(|(blk, n)| [(n[0], blk.b.as_ref()), (n[1], blk.c.as_ref())])
                .filter_map(|(n, k)| k.map(|k| (n, k)))
                .collect()
        }
    }
}

fn hypothesis_failures(name: &str, r: &HypothesisReport) -> Vec<String> {
    let mut out = Vec::new();
    if !r.selfadjoint_ok {
        out.push(format!("kernel {name}: selfadjoint hypothesis failed (max asymmetry {:.3e})", r.max_asymmetry));
    }
    if !r.commute_ok {
        out.push(format!("kernel {name}: commuting hypothesis failed (max commutator {:.3e})", r.max_commutator));
    }
    if !r.sign_ok {
        out.push(format!("kernel {name}: sign hypothesis failed (worst t·Im value {:.3e})", r.worst_sign));
    }
    out
}

fn run_certify(a: &CertifyArgs, mut cfg: RunConfig) -> Outcome {
    let nu = positive(a.nu.unwrap_or(cfg.nu), "nu")?;
    if let Some(x) = a.t_min {
        cfg.sampling.t_min = x;
    }
    if let Some(x) = a.t_max {
        cfg.sampling.t_max = x;
    }
    if let Some(x) = a.count {
        cfg.sampling.count = x;
    }
    cfg.sampling.validate().module("cli")?;
    let base = a.law.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = a.law.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let law = law_from_value(&Value::String(name), &base).module("material_law")?;
    let mut failures = Vec::new();
    let mut hyps = serde_json::Map::new();
    for (name, k) in law_kernels(&law) {
        let r = check_hypotheses(k, nu, &cfg.sampling).module("kernel_lab")?;
        failures.extend(hypothesis_failures(name, &r));
        hyps.insert(name.to_string(), serde_json::to_value(&r).map_err(Error::from).module("cli")?);
    }
    let cert = certify(&law, nu, &cfg.sampling).module("material_law")?;
    if !cert.passed {
        failures.push(format!(
            "positivity: observed constant {:.6e} (analytic bound {:?})",
            cert.c_observed, cert.c_analytic
        ));
    }
    let passed = failures.is_empty();
    let report = json!({
        "schema": SCHEMA,
        "module": "material_law",
        "passed": passed,
        "failures": failures,
        "certificate": cert,
        "hypotheses": hyps,
    });
    write_json(&report, &cfg.output_dir.join("certificate.json")).module("cli")?;
    for f in &failures {
        eprintln!("integro: certify: {f}");
    }
    println!("certify: {} (c_observed = {:.6e})", if passed { "pass" } else { "fail" }, cert.c_observed);
    Ok(if passed { EXIT_OK } else { EXIT_FAIL })
}

fn load(a: &ProblemArgs) -> std::result::Result<LoadedProblem, Failure> {
    let mut lp = load_problem(&a.problem).module("specs")?;
    if let Some(nu) = a.nu {
        positive(nu, "nu")?;
        lp.problem = lp.problem.with_nu(nu).module("spectral_solver")?;
    }
    Ok(lp)
}

fn diagnostics(sol: &Solution, lp: &LoadedProblem, tol: &Tolerances) -> Value {
    json!({
        "schema": SCHEMA,
        "module": "spectral_solver",
        "nu": lp.problem.nu,
        "grid": lp.problem.grid,
        "residual_rel": sol.residual_rel,
        "residual_ok": sol.residual_rel <= tol.residual,
        "causality_ratio": sol.causality_ratio,
        "causality_ok": sol.causality_ratio <= tol.causality,
        "support_start": sol.support_start,
        "condition": sol.condition,
        "jump_expansion": sol.jump_expansion,
        "warnings": sol.warnings,
    })
}

fn run_solve(a: &ProblemArgs, cfg: &RunConfig) -> Outcome {
    let lp = load(a)?;
    let sol = solve(&lp.problem).module("spectral_solver")?;
    write_signal(&sol.u, &cfg.output_dir.join("solution.csv")).module("cli")?;
    write_json(&diagnostics(&sol, &lp, &cfg.tolerances), &cfg.output_dir.join("diagnostics.json")).module("cli")?;
    for w in &sol.warnings {
        eprintln!("integro: warning: {w}");
    }
    println!("solve: residual {:.3e}, causality {:.3e}", sol.residual_rel, sol.causality_ratio);
    Ok(EXIT_OK)
}

fn stepping(lp: &LoadedProblem, a: &SteppingArgs, cfg: &RunConfig) -> std::result::Result<SteppingConfig, Failure> {
    let mut s = lp.stepping.clone().unwrap_or_else(|| cfg.stepping.clone());
    if let Some(dt) = a.dt {
        s.dt = dt;
    }
    if let Some(t) = a.t_end {
        s.t_end = t;
    }
    if let Some(name) = &a.scheme {
        s.scheme = match name.as_str() {
            "implicit_midpoint" => Scheme::ImplicitMidpoint,
            "implicit_euler" => Scheme::ImplicitEuler,
            other => {
                return Err(Failure { code: EXIT_USAGE, module: "cli", message: format!("unknown scheme {other:?}") })
            }
        };
    }
    s.steps().module("volterra_oracle")?;
    Ok(s)
}

/// Linear interpolation of a sampled forcing, restricted to columns
/// `[start, start + len)`.
fn interpolated(sig: &WeightedSignal, start: usize, len: usize) -> impl Fn(f64) -> crate::linalg::CVec + '_ {
    move |t| {
        let g = sig.grid;
        let x = (t - g.t_start) / g.dt;
        if x < 0.0 || x > (g.n - 1) as f64 {
            return crate::linalg::CVec::zeros(len);
        }
        let j = (x.floor() as usize).min(g.n - 2);
        let f = x - j as f64;
        let row = sig.values.row(j) * crate::linalg::c(1.0 - f) + sig.values.row(j + 1) * crate::linalg::c(f);
        row.columns(start, len).transpose()
    }
}

fn oracle_run(lp: &LoadedProblem, s: &SteppingConfig, substeps: Option<usize>) -> Result<TimeSeries> {
    if lp.has_history {
        return Err(Error::Unsupported("the oracle runs initial-value problems; give the full-line data instead".into()));
    }
    let law = &lp.problem.law;
    let op = &lp.problem.op;
    let (d0, d1) = law.dims;
    let (v0, q0) = match &lp.initial {
        Some((v, q)) => (v.clone(), q.clone().unwrap_or_else(|| crate::linalg::CVec::zeros(d1))),
        None => (crate::linalg::CVec::zeros(d0), crate::linalg::CVec::zeros(d1)),
    };
    let f = lp.forcing.as_ref().map(|sig| interpolated(sig, 0, d0));
    let g = lp.forcing.as_ref().map(|sig| interpolated(sig, d0, d1));
    let fr = f.as_ref().map(|f| f as &dyn Fn(f64) -> crate::linalg::CVec);
    let gr = g.as_ref().map(|g| g as &dyn Fn(f64) -> crate::linalg::CVec);
    match (&law.kind, substeps) {
        (LawKind::Hyperbolic { .. }, None) => step_hyperbolic(law, op, &v0, &q0, fr, gr, s),
        (LawKind::Hyperbolic { .. }, Some(k)) => augmented::hyperbolic(law, op, &v0, &q0, fr, gr, s, k),
        (_, None) => step_first_order(law, op, &v0, fr, s),
        (_, Some(k)) => augmented::first_order(law, op, &v0, fr, s, k),
    }
}

fn write_series(ts: &TimeSeries, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(f);
    let mut header = String::from("t");
    for i in 0..ts.dim() {
        header.push_str(&format!(",re_{i},im_{i}"));
    }
    writeln!(w, "{header}")?;
    for n in 0..ts.len() {
        let mut line = format!("{:.16e}", ts.time(n));
        for z in ts.values.row(n).iter() {
            line.push_str(&format!(",{:.16e},{:.16e}", z.re, z.im));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn run_oracle(a: &OracleArgs, cfg: &RunConfig) -> Outcome {
    let lp = load(&a.problem)?;
    let s = stepping(&lp, &a.stepping, cfg)?;
    let ts = oracle_run(&lp, &s, a.stepping.augmented).module("volterra_oracle")?;
    write_series(&ts, &cfg.output_dir.join("oracle.csv")).module("cli")?;
    let report = json!({
        "schema": SCHEMA,
        "module": "volterra_oracle",
        "stepping": s,
        "augmented_substeps": a.stepping.augmented,
        "steps": ts.len() - 1,
        "warnings": ts.warnings,
    });
    write_json(&report, &cfg.output_dir.join("oracle.json")).module("cli")?;
    println!("oracle: {} steps", ts.len() - 1);
    Ok(EXIT_OK)
}

/// Spectral solution restricted to the oracle's components.
fn matching_columns(u: &WeightedSignal, dim: usize) -> Result<WeightedSignal> {
    if u.dim() == dim {
        return Ok(u.clone());
    }
    WeightedSignal::new(u.grid, u.nu, u.values.columns(0, dim).into_owned())
}

fn run_compare(a: &CompareArgs, cfg: &RunConfig) -> Outcome {
    let tol = positive(a.tolerance.unwrap_or(cfg.tolerances.compare), "tolerance")?;
    let lp = load(&a.problem)?;
    let s = stepping(&lp, &a.stepping, cfg)?;
    let sol = solve(&lp.problem).module("spectral_solver")?;
    let ts = oracle_run(&lp, &s, a.stepping.augmented).module("volterra_oracle")?;
    let spectral = matching_columns(&sol.u, ts.dim()).module("cli")?;
    let cmp: Comparison = compare(&spectral, &ts).module("volterra_oracle")?;
    let passed = cmp.weighted_l2_relative <= tol;
    write_signal(&sol.u, &cfg.output_dir.join("solution.csv")).module("cli")?;
    write_series(&ts, &cfg.output_dir.join("oracle.csv")).module("cli")?;
    let report = json!({
        "schema": SCHEMA,
        "module": "compare",
        "passed": passed,
        "tolerance": tol,
        "weighted_l2_relative": cmp.weighted_l2_relative,
        "max_pointwise": cmp.max_pointwise,
        "nodes_compared": cmp.nodes_compared,
        "nu": cmp.nu,
        "causality_ratio": sol.causality_ratio,
        "residual_rel": sol.residual_rel,
        "stepping": s,
        "warnings": sol.warnings.iter().chain(ts.warnings.iter()).collect::<Vec<_>>(),
    });
    write_json(&report, &cfg.output_dir.join("metrics.json")).module("cli")?;
    println!(
        "compare: {} (weighted L2 relative error {:.3e}, tolerance {:.1e})",
        if passed { "pass" } else { "fail" },
        cmp.weighted_l2_relative,
        tol
    );
    Ok(if passed { EXIT_OK } else { EXIT_FAIL })
}

fn run_demo_visco(a: &DemoArgs, cfg: RunConfig) -> Outcome {
    let mut demo = cfg.demo.clone();
    if let Some(m) = a.m {
        demo.mesh.m = m;
    }
    if let Some(b) = a.beta {
        demo.beta = b;
    }
    if let Some(t) = a.t_end {
        demo.stepping.t_end = t;
    }
    if let Some(dt) = a.dt {
        demo.stepping.dt = dt;
    }
    if a.no_spectral {
        demo.spectral = None;
    }
    let tol = positive(a.tolerance.unwrap_or(cfg.tolerances.compare), "tolerance")?;
    let run = run_demo(&demo).module("viscoelastic")?;
    let out = &cfg.output_dir;
    write_series(&run.displacement(), &out.join("displacement.csv")).module("cli")?;
    write_series(&run.stress(), &out.join("stress.csv")).module("cli")?;
    let mut energy = String::from("t,energy\n");
    for (n, e) in run.energy.iter().enumerate() {
        energy.push_str(&format!("{:.16e},{:.16e}\n", run.oracle.time(n), e));
    }
    std::fs::write(out.join("energy.csv"), energy).map_err(Error::from).module("cli")?;
    let passed = run.comparison.as_ref().is_none_or(|c| c.weighted_l2_relative <= tol);
    let e0 = run.energy[0];
    let report = json!({
        "schema": SCHEMA,
        "module": "viscoelastic",
        "config": demo,
        "energy_initial": e0,
        "energy_final": run.energy.last(),
        "max_energy_drift": run.energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max),
        "comparison": run.comparison,
        "causality_ratio": run.spectral.as_ref().map(|s| s.causality_ratio),
        "tolerance": tol,
        "passed": passed,
        "warnings": run.oracle.warnings,
    });
    write_json(&report, &out.join("metrics.json")).module("cli")?;
    match &run.comparison {
        Some(c) => println!("demo-visco: spectral vs oracle weighted L2 relative error {:.3e}", c.weighted_l2_relative),
        None => println!("demo-visco: oracle only"),
    }
    Ok(if passed { EXIT_OK } else { EXIT_FAIL })
}
