//! Frequency-domain solver for `(∂₀M(∂₀^{−1}) + S)U = F`.
//!
//! At every frequency node the system `K(s)Û = F̂` with `s = it_k + ν` and
//! `K(s) = s·M(1/s) + S` is solved directly, then transformed back.
//!
//! Right-hand sides may contain a point source `δ⊗x` at `t = 0`. Its response
//! has a jump at the origin, which a plain inverse FFT resolves only with
//! Gibbs ripples. When `M(0)` is the identity (hyperbolic laws) the leading
//! terms of the response are expanded in `1/(s+λ)`, subtracted from the
//! spectrum and added back exactly in the time domain as
//! `χ(t)·tⁿe^{−λt}/n!`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel_lab::{Kernel, KernelForm};
use crate::linalg::{
    c, hermitian_sqrt, inverse, is_diagonal, lambda_min, max_abs, CMat, CVec,
    C64, I,
};
use crate::material_law::{LawKind, MaterialLaw};
use crate::weighted_time::{
    fourier_laplace, heaviside, inverse_fourier_laplace, sqrt_2pi, weighted_norm,
    weighted_norm_between, weighted_norm_in, TimeGrid, WeightedSignal,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorMode {
    /// `S = [[0, A*], [−A, 0]]` with `A: H₀ → H₁`.
    SkewBlock,
    /// `S = [[0, 1], [−A, 0]]` on `H₀ ⊕ H₀` for `A = A* > 0`, skew in the
    /// inner product `diag(A, 1)`.
    SelfadjointPositive,
}

/// Spatial operator block. Inner products on `H₀`, `H₁` are given by Gram
/// matrices `W₀`, `W₁` (identity when absent), and `A* = W₀^{−1}A^H W₁`.
#[derive(Clone, Debug)]
pub struct BlockOperator {
    pub a: CMat,
    pub a_star: CMat,
    pub mode: OperatorMode,
    pub w0: Option<CMat>,
    pub w1: Option<CMat>,
}

/// Eigenbasis of `G = −S₀₁S₁₀` (`A*A`, or `A` in Vlasov mode), used when both
/// diagonal blocks of `K(s)` are multiples of the identity.
#[derive(Clone, Debug)]
struct SchurBasis {
    x: CMat,
    x_inv: CMat,
    lambda: Vec<f64>,
}

impl BlockOperator {
    /// Euclidean inner products; `S* = −S` holds exactly.
    pub fn skew(a: CMat) -> Self {
        let a_star = a.adjoint();
        Self { a, a_star, mode: OperatorMode::SkewBlock, w0: None, w1: None }
    }

    /// Weighted inner products with Hermitian positive definite Gram matrices.
    pub fn weighted(a: CMat, w0: CMat, w1: CMat) -> Result<Self> {
        let (d1, d0) = a.shape();
        if w0.shape() != (d0, d0) || w1.shape() != (d1, d1) {
            return Err(Error::DimensionMismatch {
                context: "Gram matrices",
                expected: d0,
                got: w0.nrows(),
            });
        }
        for (w, name) in [(&w0, "W0"), (&w1, "W1")] {
            if crate::linalg::asymmetry(w) > 1e-12 * max_abs(w) || lambda_min(w) <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "{name} must be Hermitian positive definite"
                )));
            }
        }
        let a_star = inverse(&w0, "W0")? * a.adjoint() * &w1;
        Ok(Self { a, a_star, mode: OperatorMode::SkewBlock, w0: Some(w0), w1: Some(w1) })
    }

    pub fn selfadjoint_positive(a: CMat) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidInput("Vlasov-mode operator must be square".into()));
        }
        if crate::linalg::asymmetry(&a) > 1e-12 * max_abs(&a).max(1.0) {
            return Err(Error::InvalidInput("Vlasov-mode operator must be Hermitian".into()));
        }
        if lambda_min(&a) <= 0.0 {
            return Err(Error::InvalidInput(
                "Vlasov-mode operator must be strictly positive definite".into(),
            ));
        }
        let d = a.nrows();
        Ok(Self {
            a_star: CMat::identity(d, d),
            a: a.clone(),
            mode: OperatorMode::SelfadjointPositive,
            w0: Some(a),
            w1: None,
        })
    }

    /// `(d₀, d₁)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.a_star.nrows(), self.a.nrows())
    }

    fn s01(&self) -> &CMat {
        &self.a_star
    }

    /// The assembled `S`.
    pub fn assemble(&self) -> CMat {
        let (d0, d1) = self.dims();
        let mut s = CMat::zeros(d0 + d1, d0 + d1);
        s.view_mut((0, d0), (d0, d1)).copy_from(self.s01());
        s.view_mut((d0, 0), (d1, d0)).copy_from(&(-&self.a));
        s
    }

    /// Gram matrix of `H₀ ⊕ H₁`.
    pub fn gram(&self) -> CMat {
        let (d0, d1) = self.dims();
        let mut w = CMat::identity(d0 + d1, d0 + d1);
        if let Some(w0) = &self.w0 {
            w.view_mut((0, 0), (d0, d0)).copy_from(w0);
        }
        if let Some(w1) = &self.w1 {
            w.view_mut((d0, d0), (d1, d1)).copy_from(w1);
        }
        w
    }

    /// `max |WS + S^H W|`: zero exactly for Euclidean skew blocks.
    pub fn skew_defect(&self) -> f64 {
        let s = self.assemble();
        let w = self.gram();
        max_abs(&(&w * &s + s.adjoint() * &w))
    }

    fn schur_basis(&self) -> Result<SchurBasis> {
        let (h, left, right) = match self.mode {
            OperatorMode::SelfadjointPositive => {
                let d = self.a.nrows();
                (crate::linalg::hermitian_part(&self.a), CMat::identity(d, d), CMat::identity(d, d))
            }
            OperatorMode::SkewBlock => {
                let d0 = self.a.ncols();
                let (w0h, w0h_inv) = match &self.w0 {
                    Some(w0) => {
                        let r = hermitian_sqrt(w0);
                        let ri = inverse(&r, "W0^(1/2)")?;
                        (r, ri)
                    }
                    None => (CMat::identity(d0, d0), CMat::identity(d0, d0)),
                };
                let y = match &self.w1 {
                    Some(w1) => hermitian_sqrt(w1) * &self.a * &w0h_inv,
                    None => &self.a * &w0h_inv,
                };
                (y.adjoint() * y, w0h_inv, w0h)
            }
        };
        let eig = h.symmetric_eigen();
        let v = eig.eigenvectors;
        Ok(SchurBasis {
            x: left * &v,
            x_inv: v.adjoint() * right,
            lambda: eig.eigenvalues.iter().copied().collect(),
        })
    }
}

/// Weighting of a point source `δ⊗x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaWeight {
    /// `M(∂₀^{−1})δ⊗x`, the initial-value formulation.
    Material,
    /// Plain `δ⊗x`.
    Identity,
}

#[derive(Clone, Debug)]
pub struct DeltaSource {
    pub x: CVec,
    pub weight: DeltaWeight,
}

/// Right-hand side pieces produced by the IVP and history builders.
#[derive(Clone, Debug, Default)]
pub struct RhsParts {
    pub time: Option<WeightedSignal>,
    pub delta: Option<DeltaSource>,
}

#[derive(Clone, Debug)]
pub struct EvolutionaryProblem {
    pub law: MaterialLaw,
    pub op: BlockOperator,
    pub nu: f64,
    pub grid: TimeGrid,
    pub rhs_time: Option<WeightedSignal>,
    pub rhs_delta: Option<DeltaSource>,
}

impl EvolutionaryProblem {
    pub fn new(law: MaterialLaw, op: BlockOperator, nu: f64, grid: TimeGrid) -> Result<Self> {
        let (d0, d1) = op.dims();
        if law.dims != (d0, d1) {
            return Err(Error::DimensionMismatch {
                context: "law vs operator dimensions",
                expected: d0 + d1,
                got: law.dim(),
            });
        }
        if op.mode == OperatorMode::SelfadjointPositive && !matches!(law.kind, LawKind::Vlasov { .. } | LawKind::CustomAffine { .. }) {
            return Err(Error::InvalidInput(
                "the selfadjoint-positive operator mode pairs with the Vlasov law".into(),
            ));
        }
        grid.validate()?;
        Ok(Self { law, op, nu, grid, rhs_time: None, rhs_delta: None })
    }

    pub fn dim(&self) -> usize {
        self.law.dim()
    }

    pub fn with_time_rhs(mut self, f: WeightedSignal) -> Result<Self> {
        if f.grid != self.grid || f.dim() != self.dim() {
            return Err(Error::InvalidInput("time rhs does not match the problem grid or dimension".into()));
        }
        self.rhs_time = Some(match self.rhs_time.take() {
            Some(g) => g.add(&f)?,
            None => f.with_nu(self.nu)?,
        });
        Ok(self)
    }

    pub fn with_delta(mut self, x: CVec, weight: DeltaWeight) -> Result<Self> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { context: "delta source", expected: self.dim(), got: x.len() });
        }
        if self.rhs_delta.is_some() {
            return Err(Error::InvalidInput("problem already carries a point source".into()));
        }
        self.rhs_delta = Some(DeltaSource { x, weight });
        Ok(self)
    }

    pub fn with_parts(self, parts: RhsParts) -> Result<Self> {
        let p = match parts.time {
            Some(t) => self.with_time_rhs(t)?,
            None => self,
        };
        match parts.delta {
            Some(d) => p.with_delta(d.x, d.weight),
            None => Ok(p),
        }
    }

    /// Same problem in a different weighted space.
    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        let mut p = self.clone();
        p.nu = nu;
        if let Some(f) = &self.rhs_time {
            p.rhs_time = Some(f.with_nu(nu)?);
        }
        Ok(p)
    }

    /// Earliest time at which the right-hand side is nonzero.
    pub fn support_start(&self) -> Option<f64> {
        let mut start: Option<f64> = self.rhs_delta.as_ref().map(|_| 0.0);
        if let Some(f) = &self.rhs_time {
            if let Some(j) = (0..f.grid.n).find(|&j| f.values.row(j).iter().any(|z| z.norm() > 0.0)) {
                let t = f.grid.node(j);
                start = Some(start.map_or(t, |s: f64| s.min(t)));
            }
        }
        start
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: WeightedSignal,
    pub residual_rel: f64,
    pub causality_ratio: f64,
    pub support_start: Option<f64>,
    pub condition: ConditionStats,
    /// True when the point source was handled by the jump expansion.
    pub jump_expansion: bool,
    pub warnings: Vec<String>,
}

/// `K(s) = s·M(1/s) + S` at `s = it + ν`.
pub fn assemble_system(law: &MaterialLaw, op: &BlockOperator, t: f64, nu: f64) -> Result<CMat> {
    let smp = law.sample(t, nu)?;
    let s = I * t + nu;
    Ok(smp.m0 * s + smp.m1 + op.assemble())
}

const JUMP_TERMS: usize = 4;
const JUMP_DAMPING: f64 = 1.0;

/// Power-series coefficients of the hyperbolic law in `ε = z = 1/s`,
/// `M(ε) = Σ M_j ε^j`, `j ≤ JUMP_TERMS`.
fn hyperbolic_series(b: &Kernel, ck: &Kernel) -> Vec<CMat> {
    let (d0, d1) = (ck.dim, b.dim);
    let n = d0 + d1;
    let mut out = vec![CMat::zeros(n, n); JUMP_TERMS + 1];
    // 1 + √(2π)Ĉ(ε) = 1 + Σ_m C^{(m)}(0) ε^{m+1}
    out[0].view_mut((0, 0), (d0, d0)).copy_from(&CMat::identity(d0, d0));
    for m in 0..JUMP_TERMS {
        out[m + 1].view_mut((0, 0), (d0, d0)).copy_from(&ck.derivative_at_zero(m));
    }
    // (1 − Σ_m B^{(m)}(0) ε^{m+1})^{−1} by series inversion
    let beta: Vec<CMat> = (0..=JUMP_TERMS)
        .map(|j| if j == 0 { CMat::identity(d1, d1) } else { -b.derivative_at_zero(j - 1) })
        .collect();
    let mut r: Vec<CMat> = vec![CMat::identity(d1, d1)];
    for k in 1..=JUMP_TERMS {
        let mut acc = CMat::zeros(d1, d1);
        for j in 1..=k {
            acc -= &beta[j] * &r[k - j];
        }
        r.push(acc);
    }
    for (j, rj) in r.iter().enumerate() {
        out[j].view_mut((d0, d0), (d1, d1)).copy_from(rj);
    }
    out
}

/// Coefficients `z_n` with `Û_δ(s) ≈ (2π)^{−1/2} Σ_n z_n (s+λ)^{−(n+1)}`.
fn jump_coefficients(law: &MaterialLaw, op: &BlockOperator, src: &DeltaSource) -> Option<Vec<CVec>> {
    let LawKind::Hyperbolic { b, c: ck } = &law.kind else {
        return None;
    };
    let m = hyperbolic_series(b, ck);
    let s = op.assemble();
    let n = law.dim();
    // N(ε) = M(ε) + εS, N₀ = 1
    let nser: Vec<CMat> = (0..=JUMP_TERMS).map(|j| if j == 1 { &m[1] + &s } else { m[j].clone() }).collect();
    let mut r: Vec<CMat> = vec![CMat::identity(n, n)];
    for k in 1..JUMP_TERMS {
        let mut acc = CMat::zeros(n, n);
        for j in 1..=k {
            acc -= &nser[j] * &r[k - j];
        }
        r.push(acc);
    }
    let d: Vec<CMat> = (0..JUMP_TERMS)
        .map(|j| match src.weight {
            DeltaWeight::Material => m[j].clone(),
            DeltaWeight::Identity if j == 0 => CMat::identity(n, n),
            DeltaWeight::Identity => CMat::zeros(n, n),
        })
        .collect();
    // Û_δ = (2π)^{−1/2} Σ_k y_k ε^{k+1}
    let y: Vec<CVec> = (0..JUMP_TERMS)
        .map(|k| (0..=k).fold(CVec::zeros(n), |acc, i| acc + &r[i] * (&d[k - i] * &src.x)))
        .collect();
    // ε^{k+1} = Σ_j C(k+j, j) λ^j ε'^{k+1+j} with ε' = 1/(s+λ)
    let lam = JUMP_DAMPING;
    let z = (0..JUMP_TERMS)
        .map(|nn| {
            (0..=nn).fold(CVec::zeros(n), |acc, k| {
                acc + &y[k] * c(binomial(nn, nn - k) * lam.powi((nn - k) as i32))
            })
        })
        .collect();
    Some(z)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

struct FrequencyResult {
    u: CVec,
    residual2: f64,
    rhs2: f64,
    cond: f64,
}

/// Fast path for laws whose blocks are scalar multiples of the identity:
/// the law is evaluated on 1×1 kernels and `K(s)` is never formed.
struct ScalarPath {
    law: MaterialLaw,
    basis: SchurBasis,
}

impl ScalarPath {
    fn new(law: &MaterialLaw, op: &BlockOperator) -> Option<Self> {
        let (d0, d1) = law.dims;
        if d0 == 0 || d1 == 0 {
            return None;
        }
        let scalar = match &law.kind {
            LawKind::Hyperbolic { b, c } => MaterialLaw::hyperbolic(b.as_scalar()?, c.as_scalar()?),
            LawKind::Parabolic { b, c } => MaterialLaw::parabolic(b.as_scalar()?, c.as_scalar()?),
            LawKind::Vlasov { b, c } => MaterialLaw::vlasov(b.as_scalar()?, c.as_scalar()?),
            LawKind::CustomAffine { .. } => return None,
        }
        .ok()?;
        Some(Self { law: scalar, basis: op.schur_basis().ok()? })
    }

    /// `(p, q, M₀₀(z), M₁₁(z))` at `s = it + ν`.
    fn sample(&self, t: f64, nu: f64) -> Result<(C64, C64, C64, C64)> {
        let smp = self.law.sample(t, nu)?;
        let s = I * t + nu;
        let (a0, a1) = (smp.m0[(0, 0)], smp.m1[(0, 0)]);
        let (b0, b1) = (smp.m0[(1, 1)], smp.m1[(1, 1)]);
        Ok((s * a0 + a1, s * b0 + b1, a0 + a1 / s, b0 + b1 / s))
    }
}

fn sum_sq(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn solve_scalar_path(
    fast: &ScalarPath,
    op: &BlockOperator,
    t: f64,
    nu: f64,
    rhs: &CVec,
    delta: Option<&DeltaSource>,
    k: usize,
) -> Result<FrequencyResult> {
    let (d0, d1) = op.dims();
    let (pp, qq, mz0, mz1) = fast.sample(t, nu)?;
    let singular = || Error::SingularSystem { index: k, freq: t };
    let mut f0 = rhs.rows(0, d0).into_owned();
    let mut f1 = rhs.rows(d0, d1).into_owned();
    if let Some(src) = delta {
        let w = 1.0 / sqrt_2pi();
        let (w0, w1) = match src.weight {
            DeltaWeight::Identity => (c(w), c(w)),
            DeltaWeight::Material => (mz0 * w, mz1 * w),
        };
        f0 += src.x.rows(0, d0) * w0;
        f1 += src.x.rows(d0, d1) * w1;
    }
    if qq.norm() == 0.0 {
        return Err(singular());
    }
    let bs = &fast.basis;
    let mut w = &bs.x_inv * (&f0 - op.s01() * (&f1 / qq));
    let mut dmin = f64::INFINITY;
    let mut dmax: f64 = 0.0;
    for (i, l) in bs.lambda.iter().enumerate() {
        let dg = pp + c(*l) / qq;
        if dg.norm() == 0.0 {
            return Err(singular());
        }
        dmin = dmin.min(dg.norm());
        dmax = dmax.max(dg.norm());
        w[i] /= dg;
    }
    let v = &bs.x * w;
    let av = &op.a * &v;
    let qv = (&f1 + &av) / qq;
    let r0 = &v * pp + op.s01() * &qv - &f0;
    let r1 = &qv * qq - av - &f1;
    let mut u = CVec::zeros(d0 + d1);
    u.rows_mut(0, d0).copy_from(&v);
    u.rows_mut(d0, d1).copy_from(&qv);
    if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(singular());
    }
    Ok(FrequencyResult {
        u,
        residual2: sum_sq(&r0) + sum_sq(&r1),
        rhs2: sum_sq(&f0) + sum_sq(&f1),
        cond: (dmax.max(qq.norm()) / dmin.min(qq.norm())).max(1.0),
    })
}

fn solve_dense(
    law: &MaterialLaw,
    s_mat: &CMat,
    t: f64,
    nu: f64,
    rhs: &CVec,
    delta: Option<&DeltaSource>,
    k: usize,
) -> Result<FrequencyResult> {
    let smp = law.sample(t, nu)?;
    let s = I * t + nu;
    let mut rhs = rhs.clone();
    if let Some(src) = delta {
        let x = &src.x * c(1.0 / sqrt_2pi());
        rhs += match src.weight {
            DeltaWeight::Identity => x,
            DeltaWeight::Material => (&smp.m0 + &smp.m1 / s) * x,
        };
    }
    let kmat = smp.m0 * s + smp.m1 + s_mat;
    let singular = || Error::SingularSystem { index: k, freq: t };
    let (u, cond) = if is_diagonal(&kmat) {
        let mut u = rhs.clone();
        let mut dmin = f64::INFINITY;
        let mut dmax: f64 = 0.0;
        for i in 0..u.len() {
            let dg = kmat[(i, i)];
            if dg.norm() == 0.0 {
                return Err(singular());
            }
            dmin = dmin.min(dg.norm());
            dmax = dmax.max(dg.norm());
            u[i] /= dg;
        }
        (u, dmax / dmin)
    } else {
        let lu = kmat.clone().lu();
        let upper = lu.u();
        let diag: Vec<f64> = (0..upper.nrows()).map(|i| upper[(i, i)].norm()).collect();
        let dmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
        let dmax = diag.iter().copied().fold(0.0, f64::max);
        if dmin == 0.0 || !dmin.is_finite() {
            return Err(singular());
        }
        let u = lu.solve(&rhs).ok_or_else(singular)?;
        (u, dmax / dmin)
    };
    if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(singular());
    }
    let r = &kmat * &u - &rhs;
    Ok(FrequencyResult { residual2: sum_sq(&r), rhs2: sum_sq(&rhs), u, cond })
}

/// Runs `f` on a pool capped by `INTEGRO_THREADS` when that is set.
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match std::env::var("INTEGRO_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

pub fn solve(p: &EvolutionaryProblem) -> Result<Solution> {
    with_thread_cap(|| solve_inner(p))
}

fn solve_inner(p: &EvolutionaryProblem) -> Result<Solution> {
    if p.rhs_time.is_none() && p.rhs_delta.is_none() {
        return Err(Error::InvalidInput("problem has no right-hand side".into()));
    }
    if !(p.nu > 0.0) {
        return Err(Error::InvalidWeight { nu: p.nu, reason: "the weight must be positive".into() });
    }
    let mut warnings = Vec::new();
    if p.nu < p.law.nu_min {
        warnings.push(format!(
            "weight {} is below the law's certified minimum {}; per-frequency admissibility is checked instead",
            p.nu, p.law.nu_min
        ));
    }
    let g = p.grid;
    let n = p.dim();
    let fhat = match &p.rhs_time {
        Some(f) => Some(fourier_laplace(&f.with_nu(p.nu)?)?),
        None => None,
    };
    let jump = p.rhs_delta.as_ref().and_then(|src| jump_coefficients(&p.law, &p.op, src));
    if p.rhs_delta.is_some() && jump.is_none() {
        warnings.push("point source resolved without jump expansion; expect Gibbs ripples near t = 0".into());
    }
    let s_mat = p.op.assemble();
    let fast = ScalarPath::new(&p.law, &p.op);
    let inv_sqrt_2pi = 1.0 / sqrt_2pi();
    let results: Vec<Result<FrequencyResult>> = (0..g.n)
        .into_par_iter()
        .map(|k| {
            let t = g.frequency(k);
            let rhs = match &fhat {
                Some(f) => f.value(k),
                None => CVec::zeros(n),
            };
            let delta = p.rhs_delta.as_ref();
            let mut res = match &fast {
                Some(fp) => solve_scalar_path(fp, &p.op, t, p.nu, &rhs, delta, k)?,
                None => solve_dense(&p.law, &s_mat, t, p.nu, &rhs, delta, k)?,
            };
            if let Some(z) = &jump {
                let eps = (I * t + p.nu + JUMP_DAMPING).inv();
                let mut pw = eps;
                for zn in z {
                    res.u -= zn * (pw * inv_sqrt_2pi);
                    pw *= eps;
                }
            }
            Ok(res)
        })
        .collect();
    let mut uhat = DMatrix::<C64>::zeros(g.n, n);
    let (mut r2, mut f2) = (0.0, 0.0);
    let mut conds = Vec::with_capacity(g.n);
    for (k, res) in results.into_iter().enumerate() {
        let res = res?;
        uhat.row_mut(k).copy_from(&res.u.transpose());
        r2 += res.residual2;
        f2 += res.rhs2;
        conds.push(res.cond);
    }
    let spectrum = crate::weighted_time::Spectrum::new(g, p.nu, uhat)?;
    let mut u = inverse_fourier_laplace(&spectrum)?;
    if let Some(z) = &jump {
        for j in 0..g.n {
            let t = g.node(j);
            let h = heaviside(t, g.dt);
            if h == 0.0 {
                continue;
            }
            let e = (-JUMP_DAMPING * t).exp();
            let mut row = DVector::<C64>::zeros(n);
            for (nn, zn) in z.iter().enumerate() {
                row += zn * c(h * t.powi(nn as i32) * e / factorial(nn));
            }
            let mut r = u.values.row_mut(j);
            r += row.transpose();
        }
    }
    let residual_rel = if f2 > 0.0 { (r2 / f2).sqrt() } else { 0.0 };
    let start = p.support_start();
    let total = weighted_norm(&u);
    let causality_ratio = match start {
        Some(s) if total > 0.0 => weighted_norm_between(&u, f64::NEG_INFINITY, s - 0.5 * g.dt) / total,
        _ => 0.0,
    };
    let decay = u.end_decay();
    if decay > 1e-6 {
        warnings.push(format!(
            "weighted solution has not decayed by the end of the window (tail/peak = {decay:.2e}); wrap-around may pollute early times"
        ));
    }
    let condition = ConditionStats {
        min: conds.iter().copied().fold(f64::INFINITY, f64::min),
        max: conds.iter().copied().fold(0.0, f64::max),
        mean: conds.iter().sum::<f64>() / conds.len() as f64,
    };
    Ok(Solution {
        u,
        residual_rel,
        causality_ratio,
        support_start: start,
        condition,
        jump_expansion: jump.is_some(),
        warnings,
    })
}

/// Initial-value right-hand side `(f, g) + M(∂₀^{−1})δ⊗(v⁰, q⁰)`.
pub fn build_ivp_rhs(
    law: &MaterialLaw,
    v0: &CVec,
    q0: &CVec,
    fg: Option<&WeightedSignal>,
) -> Result<RhsParts> {
    if !matches!(law.kind, LawKind::Hyperbolic { .. }) {
        return Err(Error::Unsupported("initial-value problems need a hyperbolic law".into()));
    }
    let (d0, d1) = law.dims;
    if v0.len() != d0 || q0.len() != d1 {
        return Err(Error::DimensionMismatch { context: "initial values", expected: d0 + d1, got: v0.len() + q0.len() });
    }
    let mut x = CVec::zeros(d0 + d1);
    x.rows_mut(0, d0).copy_from(v0);
    x.rows_mut(d0, d1).copy_from(q0);
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("initial values"));
    }
    if let Some(f) = fg {
        if f.dim() != d0 + d1 {
            return Err(Error::DimensionMismatch { context: "ivp forcing", expected: d0 + d1, got: f.dim() });
        }
    }
    Ok(RhsParts { time: fg.cloned(), delta: Some(DeltaSource { x, weight: DeltaWeight::Material }) })
}

/// State-space form `E(t) = C_m e^{Gt} B_m` of an exponential-sum kernel.
fn state_space(k: &Kernel) -> Result<(CMat, CMat, CMat)> {
    let KernelForm::ExpSum(terms) = &k.form else {
        return Err(Error::Unsupported(
            "history right-hand sides need exponential-sum kernels".into(),
        ));
    };
    let d = k.dim;
    let m = terms.len();
    let mut cm = CMat::zeros(d, m * d);
    let mut gm = CMat::zeros(m * d, m * d);
    let mut bm = CMat::zeros(m * d, d);
    for (j, t) in terms.iter().enumerate() {
        cm.view_mut((0, j * d), (d, d)).copy_from(&t.coeff);
        gm.view_mut((j * d, j * d), (d, d)).copy_from(&(CMat::identity(d, d) * c(-t.rate)));
        bm.view_mut((j * d, 0), (d, d)).copy_from(&CMat::identity(d, d));
    }
    Ok((cm, gm, bm))
}

/// `t ↦ (d/dt)(E∗h)(t)` for `t ≥ 0` at the grid nodes, with `h` supported in
/// `t ≤ 0`; the node at `t = 0` carries half the right limit.
fn history_tail(
    cm: &CMat,
    gm: &CMat,
    bm: &CMat,
    h: &WeightedSignal,
    zero: usize,
) -> DMatrix<C64> {
    let g = h.grid;
    let d = h.dim();
    let mut out = DMatrix::<C64>::zeros(g.n, d);
    if gm.nrows() == 0 {
        return out;
    }
    let step = (gm * c(g.dt)).exp();
    // Φ = ∫_{−∞}^0 e^{−Gs} B_m h(s) ds by the trapezoid rule (Horner form)
    let mut phi = CVec::zeros(gm.nrows());
    for j in 0..=zero {
        let w = if j == 0 || j == zero { 0.5 } else { 1.0 };
        phi = &step * phi + bm * h.value(j) * c(w * g.dt);
    }
    let cg = cm * gm;
    let mut state = phi;
    for j in zero..g.n {
        let val = &cg * &state;
        let w = if j == zero { 0.5 } else { 1.0 };
        out.row_mut(j).copy_from(&(val * c(w)).transpose());
        state = &step * state;
    }
    out
}

/// Right-hand side for the continuation of a solution with prescribed past
/// `(v_hist, q_hist)` (samples for `t ≤ 0`, zero afterwards):
/// `χ_{t>0}(f, g) − χ_{t>0}·(d/dt)((M − 1)(v_hist, q_hist)) + δ⊗(v_hist(0), q_hist(0))`.
///
/// The derivative term is the classical one on `t > 0`; the point source then
/// carries no material weight (the jump of the history itself is already
/// accounted for by `M`).
pub fn build_history_rhs(
    law: &MaterialLaw,
    v_hist: &WeightedSignal,
    q_hist: &WeightedSignal,
    fg: Option<&WeightedSignal>,
) -> Result<RhsParts> {
    let LawKind::Hyperbolic { b, c: ck } = &law.kind else {
        return Err(Error::Unsupported("history problems need a hyperbolic law".into()));
    };
    let (d0, d1) = law.dims;
    if v_hist.grid != q_hist.grid || v_hist.dim() != d0 || q_hist.dim() != d1 {
        return Err(Error::InvalidInput("history signals do not match the law dimensions or each other".into()));
    }
    let g = v_hist.grid;
    let zero = g
        .index_of(0.0)
        .ok_or_else(|| Error::InvalidGrid("history problems need t = 0 on the grid".into()))?;
    for (sig, name) in [(v_hist, "v"), (q_hist, "q")] {
        for j in zero + 1..g.n {
            if sig.values.row(j).iter().any(|z| z.norm() > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} history leaks into t > 0 (node t = {})",
                    g.node(j)
                )));
            }
        }
    }
    let nu = v_hist.nu;
    let mut values = DMatrix::<C64>::zeros(g.n, d0 + d1);
    if let Some(f) = fg {
        if f.grid != g || f.dim() != d0 + d1 {
            return Err(Error::InvalidInput("forcing does not match the history grid".into()));
        }
        // the caller's value at the t = 0 node (usually the mid-value) is kept
        for j in zero..g.n {
            values.row_mut(j).copy_from(&f.values.row(j));
        }
    }
    // block 0: (1 + C∗) − 1 = C∗
    let (cm, gm, bm) = state_space(ck)?;
    let tail0 = history_tail(&cm, &gm, &bm, v_hist, zero);
    // block 1: (1 − B∗)^{−1} − 1 = R∗ with R(t) = C_m e^{(G + B_m C_m)t} B_m
    let (cm, gm, bm) = state_space(b)?;
    let gr = &gm + &bm * &cm;
    let tail1 = history_tail(&cm, &gr, &bm, q_hist, zero);
    for j in 0..g.n {
        for i in 0..d0 {
            values[(j, i)] -= tail0[(j, i)];
        }
        for i in 0..d1 {
            values[(j, d0 + i)] -= tail1[(j, i)];
        }
    }
    let mut x = CVec::zeros(d0 + d1);
    x.rows_mut(0, d0).copy_from(&v_hist.value(zero));
    x.rows_mut(d0, d1).copy_from(&q_hist.value(zero));
    Ok(RhsParts {
        time: Some(WeightedSignal::new(g, nu, values)?),
        delta: Some(DeltaSource { x, weight: DeltaWeight::Identity }),
    })
}

/// `w + hist`, continuous at the origin: the node at `t = 0` takes the
/// history value there instead of the mid-value of the jump.
pub fn reconstruct_from_history(w: &WeightedSignal, hist: &WeightedSignal) -> Result<WeightedSignal> {
    let mut out = w.add(hist)?;
    if let Some(zero) = w.grid.index_of(0.0) {
        out.values.row_mut(zero).copy_from(&hist.values.row(zero));
    }
    Ok(out)
}

/// Relative discrepancy between solutions at `ν` and `ν₂`, measured in
/// `H_{max(ν,ν₂),0}` over the whole window.
pub fn nu_independence_check(p: &EvolutionaryProblem, nu2: f64) -> Result<f64> {
    if nu2 == p.nu {
        return Ok(0.0);
    }
    let a = solve(p)?;
    let b = solve(&p.with_nu(nu2)?)?;
    let w = p.nu.max(nu2);
    let diff = a.u.sub(&b.u.with_nu(p.nu)?)?;
    let den = weighted_norm_in(&a.u, w, f64::NEG_INFINITY, f64::INFINITY);
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(weighted_norm_in(&diff, w, f64::NEG_INFINITY, f64::INFINITY) / den)
}

/// `u(t₀+)` by a least-squares line through the nodes in
/// `[t₀ + 2dt, t₀ + 6dt]`.
pub fn extrapolate_initial(u: &WeightedSignal, t0: f64) -> Result<CVec> {
    let g = u.grid;
    let pts: Vec<usize> = (0..g.n)
        .filter(|&j| {
            let x = (g.node(j) - t0) / g.dt;
            (1.5..6.5).contains(&x)
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidGrid("not enough nodes after t0 to extrapolate".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|&j| g.node(j) - t0).collect();
    let m = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let mut out = CVec::zeros(u.dim());
    for comp in 0..u.dim() {
        let ys: Vec<C64> = pts.iter().map(|&j| u.values[(j, comp)]).collect();
        let ybar = ys.iter().sum::<C64>() / m;
        let sxy: C64 = xs.iter().zip(&ys).map(|(x, y)| (y - ybar) * (x - xbar)).sum();
        let slope = sxy / sxx;
        out[comp] = ybar - slope * xbar;
    }
    Ok(out)
}
