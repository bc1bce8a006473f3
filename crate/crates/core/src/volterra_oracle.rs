//! Time-stepping reference solver.
//!
//! Hyperbolic laws are stepped in the substituted form
//!
//! ```text
//! φ + C∗φ + A*q = f,   q = q⁰ + P − B∗P,   P' = Av + g,   v' = φ
//! ```
//!
//! where memory acts on increments after `t_start`, matching the δ-source
//! initial-value formulation of the spectral solver. Parabolic and Vlasov
//! laws share one routine for `φ + C∗φ + Lu − R(B∗(Qu)) = f`, `u' = φ`.
//!
//! Convolutions use the trapezoid rule; exponential sums are accumulated
//! recursively in O(1) per step, sampled kernels by direct summation.
//! [`augmented`] solves the same problems exactly in state-space form when
//! all kernels are exponential sums.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel_lab::{Kernel, KernelForm};
use crate::linalg::{c, inverse, CMat, CVec, C64};
use crate::material_law::{LawKind, MaterialLaw};
use crate::spectral_solver::{BlockOperator, OperatorMode};
use crate::weighted_time::{TimeGrid, WeightedSignal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImplicitEuler,
    ImplicitMidpoint,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteppingConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub t_start: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Runs whose norm grows faster than `e^{growth_limit·(t − t_start)}`
    /// are aborted as unstable.
    #[serde(default = "default_growth")]
    pub growth_limit: f64,
}

fn default_scheme() -> Scheme {
    Scheme::ImplicitMidpoint
}

fn default_growth() -> f64 {
    10.0
}

impl SteppingConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self { dt, t_end, t_start: 0.0, scheme: Scheme::ImplicitMidpoint, growth_limit: 10.0 }
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !self.dt.is_finite() || !(self.t_end > self.t_start) {
            return Err(Error::InvalidInput(format!(
                "stepping needs dt > 0 and t_end > t_start (dt = {}, t_start = {}, t_end = {})",
                self.dt, self.t_start, self.t_end
            )));
        }
        let n = (self.t_end - self.t_start) / self.dt;
        let r = n.round();
        if (n - r).abs() > 1e-6 * n.max(1.0) || r > 1e7 {
            return Err(Error::InvalidInput(format!(
                "(t_end − t_start)/dt = {n} must be an integer not exceeding 1e7"
            )));
        }
        Ok(r as usize)
    }

    /// Midpoint weight `α` in `x_n = x_{n−1} + (h − α)x'_{n−1} + α x'_n`.
    fn alpha(&self) -> f64 {
        match self.scheme {
            Scheme::ImplicitEuler => self.dt,
            Scheme::ImplicitMidpoint => 0.5 * self.dt,
        }
    }
}

/// Samples at `t_start + n·dt`, `n = 0..=steps`.
#[derive(Clone, Debug)]
pub struct TimeSeries {
    pub t_start: f64,
    pub dt: f64,
    pub values: DMatrix<C64>,
    pub warnings: Vec<String>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t_start + n as f64 * self.dt
    }

    pub fn value(&self, n: usize) -> CVec {
        self.values.row(n).transpose()
    }

    /// `xᴴWx` per step (Euclidean when `gram` is `None`).
    pub fn energy(&self, gram: Option<&CMat>) -> Vec<f64> {
        (0..self.len())
            .map(|n| {
                let x = self.value(n);
                match gram {
                    Some(w) => (x.adjoint() * w * &x)[(0, 0)].re,
                    None => x.norm_squared(),
                }
            })
            .collect()
    }

    /// Linear interpolation; `None` outside the stepped window.
    pub fn at(&self, t: f64) -> Option<CVec> {
        let x = (t - self.t_start) / self.dt;
        let last = (self.len() - 1) as f64;
        if x < -1e-9 || x > last + 1e-9 {
            return None;
        }
        let x = x.clamp(0.0, last);
        let j = (x.floor() as usize).min(self.len().saturating_sub(2));
        let f = x - j as f64;
        if self.len() == 1 {
            return Some(self.value(0));
        }
        Some(self.value(j) * c(1.0 - f) + self.value(j + 1) * c(f))
    }

    /// Samples on `grid`, zero outside the stepped window.
    pub fn to_signal(&self, grid: TimeGrid, nu: f64) -> Result<WeightedSignal> {
        let d = self.dim();
        WeightedSignal::from_fn(grid, nu, d, |t| self.at(t).unwrap_or_else(|| CVec::zeros(d)))
    }

    /// Columns `range` only.
    pub fn columns(&self, start: usize, count: usize) -> TimeSeries {
        TimeSeries {
            t_start: self.t_start,
            dt: self.dt,
            values: self.values.columns(start, count).into_owned(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Trapezoid convolution `(K∗x)(t_n) ≈ h Σ_k w_k K(t_n − t_k) x_k` fed one
/// sample at a time.
enum Convolution {
    Zero,
    Exp { coeffs: Vec<CMat>, decay: Vec<f64>, state: Vec<CVec> },
    Direct { kvals: Vec<CMat>, kernel: Kernel, xs: Vec<CVec> },
}

impl Convolution {
    fn new(k: &Kernel, h: f64) -> Self {
        if k.is_zero() {
            return Self::Zero;
        }
        match &k.form {
            KernelForm::ExpSum(terms) => Self::Exp {
                coeffs: terms.iter().map(|t| t.coeff.clone()).collect(),
                decay: terms.iter().map(|t| (-t.rate * h).exp()).collect(),
                state: Vec::new(),
            },
            KernelForm::Sampled { .. } => Self::Direct { kvals: Vec::new(), kernel: k.clone(), xs: Vec::new() },
        }
    }

    /// `h Σ_{k<n} w_k K(t_n − t_k) x_k` for the next index `n ≥ 1`.
    fn history(&mut self, h: f64, d: usize) -> CVec {
        match self {
            Self::Zero => CVec::zeros(d),
            Self::Exp { coeffs, decay, state } => coeffs
                .iter()
                .zip(decay.iter())
                .zip(state.iter())
                .fold(CVec::zeros(d), |acc, ((k, e), s)| acc + k * s * c(h * e)),
            Self::Direct { kvals, kernel, xs } => {
                let n = xs.len();
                while kvals.len() <= n {
                    kvals.push(kernel.value_at(kvals.len() as f64 * h));
                }
                let mut acc = CVec::zeros(d);
                for (k, x) in xs.iter().enumerate() {
                    let w = if k == 0 { 0.5 } else { 1.0 };
                    acc += &kvals[n - k] * x * c(w * h);
                }
                acc
            }
        }
    }

    fn push(&mut self, x: &CVec) {
        match self {
            Self::Zero => {}
            Self::Exp { decay, state, .. } => {
                if state.is_empty() {
                    *state = decay.iter().map(|_| x * c(0.5)).collect();
                } else {
                    for (s, e) in state.iter_mut().zip(decay.iter()) {
                        *s = &*s * c(*e) + x;
                    }
                }
            }
            Self::Direct { xs, .. } => xs.push(x.clone()),
        }
    }
}

type Forcing<'a> = Option<&'a dyn Fn(f64) -> CVec>;

fn eval(f: Forcing<'_>, t: f64, d: usize) -> Result<CVec> {
    match f {
        Some(f) => {
            let v = f(t);
            if v.len() != d {
                return Err(Error::DimensionMismatch { context: "forcing", expected: d, got: v.len() });
            }
            Ok(v)
        }
        None => Ok(CVec::zeros(d)),
    }
}

fn rate_warning(kernels: &[&Kernel], dt: f64) -> Option<String> {
    let fastest = kernels
        .iter()
        .filter_map(|k| match &k.form {
            KernelForm::ExpSum(t) => t.iter().map(|t| t.rate.abs()).reduce(f64::max),
            KernelForm::Sampled { .. } => None,
        })
        .fold(0.0, f64::max);
    (dt * fastest > 0.1).then(|| {
        format!("dt·max rate = {:.3} exceeds 0.1; kernel memory is under-resolved", dt * fastest)
    })
}

struct Guard {
    scale: f64,
    rate: f64,
    t0: f64,
}

impl Guard {
    fn check(&self, x: &CVec, t: f64) -> Result<()> {
        let norm = x.norm();
        if !norm.is_finite() {
            return Err(Error::Unstable(format!("non-finite state at t = {t}")));
        }
        let bound = self.scale * (self.rate * (t - self.t0)).exp();
        if norm > bound {
            return Err(Error::Unstable(format!(
                "state norm {norm:.3e} at t = {t} exceeds growth bound {bound:.3e}"
            )));
        }
        Ok(())
    }
}

fn lu_solver(m: CMat, what: &'static str) -> Result<nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>> {
    inverse(&m, what)?;
    Ok(m.lu())
}

fn law_kernels(law: &MaterialLaw) -> Result<(&Kernel, &Kernel)> {
    match &law.kind {
        LawKind::Hyperbolic { b, c } | LawKind::Parabolic { b, c } | LawKind::Vlasov { b, c } => Ok((b, c)),
        LawKind::CustomAffine { .. } => Err(Error::Unsupported(
            "the time-stepping oracle handles hyperbolic, parabolic and Vlasov laws only".into(),
        )),
    }
}

/// Steps the hyperbolic system from `(v⁰, q⁰)` at `cfg.t_start`.
/// Output columns are `(v, q)`.
pub fn step_hyperbolic(
    law: &MaterialLaw,
    op: &BlockOperator,
    v0: &CVec,
    q0: &CVec,
    f: Forcing<'_>,
    g: Forcing<'_>,
    cfg: &SteppingConfig,
) -> Result<TimeSeries> {
    let LawKind::Hyperbolic { b, c: ck } = &law.kind else {
        return Err(Error::InvalidInput("step_hyperbolic needs a hyperbolic law".into()));
    };
    if op.mode != OperatorMode::SkewBlock {
        return Err(Error::InvalidInput("hyperbolic stepping needs a skew-block operator".into()));
    }
    let (d0, d1) = law.dims;
    if op.dims() != (d0, d1) || v0.len() != d0 || q0.len() != d1 {
        return Err(Error::DimensionMismatch { context: "oracle dimensions", expected: d0 + d1, got: v0.len() + q0.len() });
    }
    let steps = cfg.steps()?;
    let h = cfg.dt;
    let alpha = cfg.alpha();
    let (a, a_star) = (&op.a, &op.a_star);
    let mut warnings: Vec<String> = rate_warning(&[b, ck], h).into_iter().collect();
    let c0 = ck.value_at(0.0) * c(0.5 * h);
    let bt = CMat::identity(d1, d1) - b.value_at(0.0) * c(0.5 * h);
    let system = CMat::identity(d0, d0) + &c0 + a_star * &bt * a * c(alpha * alpha);
    let lu = lu_solver(system, "hyperbolic step matrix")?;
    let mut conv_c = Convolution::new(ck, h);
    let mut conv_b = Convolution::new(b, h);

    let t0 = cfg.t_start;
    let mut out = DMatrix::<C64>::zeros(steps + 1, d0 + d1);
    let mut v = v0.clone();
    let mut q = q0.clone();
    let mut p = CVec::zeros(d1);
    let mut gk = eval(g, t0, d1)?;
    let mut phi = eval(f, t0, d0)? - a_star * q0;
    conv_c.push(&phi);
    conv_b.push(&p);
    let scale = 1.0 + v0.norm() + q0.norm();
    let guard = Guard { scale: 1e3 * scale, rate: cfg.growth_limit, t0 };
    let mut fmax: f64 = 0.0;
    let write = |out: &mut DMatrix<C64>, n: usize, v: &CVec, q: &CVec| {
        out.view_mut((n, 0), (1, d0)).copy_from(&v.transpose());
        out.view_mut((n, d0), (1, d1)).copy_from(&q.transpose());
    };
    write(&mut out, 0, &v, &q);
    for n in 1..=steps {
        let t = t0 + n as f64 * h;
        let fn_ = eval(f, t, d0)?;
        let gn = eval(g, t, d1)?;
        fmax = fmax.max(fn_.norm() + gn.norm());
        let vk = &v + &phi * c(h - alpha);
        let pk = &p + (a * &v + &gk) * c(h - alpha);
        let known_c = conv_c.history(h, d0);
        let known_b = conv_b.history(h, d1);
        let q_known = q0 - known_b + &bt * (&pk + (&gn + a * &vk) * c(alpha));
        let rhs = &fn_ - known_c - a_star * &q_known;
        phi = lu.solve(&rhs).ok_or_else(|| Error::Singular("hyperbolic step matrix".into()))?;
        v = vk + &phi * c(alpha);
        p = pk + (a * &v + &gn) * c(alpha);
        q = q_known + &bt * (a * &phi) * c(alpha * alpha);
        conv_c.push(&phi);
        conv_b.push(&p);
        gk = gn;
        write(&mut out, n, &v, &q);
        let mut state = CVec::zeros(d0 + d1);
        state.rows_mut(0, d0).copy_from(&v);
        state.rows_mut(d0, d1).copy_from(&q);
        Guard { scale: guard.scale + 1e3 * fmax * (t - t0 + 1.0), ..guard }.check(&state, t)?;
    }
    if law.nu_min > 0.0 && cfg.growth_limit < law.nu_min {
        warnings.push(format!("growth limit {} is below the law's Neumann weight {}", cfg.growth_limit, law.nu_min));
    }
    Ok(TimeSeries { t_start: t0, dt: h, values: out, warnings })
}

/// `(L, R, Q)` for `φ + C∗φ + Lu − R(B∗(Qu)) = f`.
fn first_order_operators(law: &MaterialLaw, op: &BlockOperator) -> Result<(CMat, CMat, CMat)> {
    match (&law.kind, op.mode) {
        (LawKind::Parabolic { .. }, OperatorMode::SkewBlock) => {
            Ok((&op.a_star * &op.a, op.a_star.clone(), op.a.clone()))
        }
        (LawKind::Vlasov { .. }, OperatorMode::SelfadjointPositive) => {
            let d = op.a.nrows();
            Ok((op.a.clone(), CMat::identity(d, d), op.a.clone()))
        }
        _ => Err(Error::InvalidInput(
            "first-order stepping pairs parabolic laws with skew blocks and Vlasov laws with positive operators".into(),
        )),
    }
}

/// Parabolic (`∂₀u + C∗∂₀u + A*Au − A*(B∗Au) = f`) or Vlasov
/// (`∂₀u + C∗∂₀u + Au − B∗Au = f`) stepping from `u⁰`.
pub fn step_first_order(
    law: &MaterialLaw,
    op: &BlockOperator,
    u0: &CVec,
    f: Forcing<'_>,
    cfg: &SteppingConfig,
) -> Result<TimeSeries> {
    let (b, ck) = law_kernels(law)?;
    let (l, r, q) = first_order_operators(law, op)?;
    let d = l.nrows();
    let db = q.nrows();
    if u0.len() != d || ck.dim != d || b.dim != db {
        return Err(Error::DimensionMismatch { context: "oracle dimensions", expected: d, got: u0.len() });
    }
    let steps = cfg.steps()?;
    let h = cfg.dt;
    let alpha = cfg.alpha();
    let warnings: Vec<String> = rate_warning(&[b, ck], h).into_iter().collect();
    let c0 = ck.value_at(0.0) * c(0.5 * h);
    let rb0q = &r * b.value_at(0.0) * &q * c(0.5 * h);
    let system = CMat::identity(d, d) + &c0 + (&l - &rb0q) * c(alpha);
    let lu = lu_solver(system, "first-order step matrix")?;
    let mut conv_c = Convolution::new(ck, h);
    let mut conv_b = Convolution::new(b, h);

    let t0 = cfg.t_start;
    let mut out = DMatrix::<C64>::zeros(steps + 1, d);
    let mut u = u0.clone();
    let mut phi = eval(f, t0, d)? - &l * u0;
    conv_c.push(&phi);
    conv_b.push(&(&q * u0));
    out.row_mut(0).copy_from(&u.transpose());
    let mut fmax: f64 = 0.0;
    for n in 1..=steps {
        let t = t0 + n as f64 * h;
        let fn_ = eval(f, t, d)?;
        fmax = fmax.max(fn_.norm());
        let uk = &u + &phi * c(h - alpha);
        let known_c = conv_c.history(h, d);
        let known_b = conv_b.history(h, db);
        let rhs = fn_ - known_c - &l * &uk + &r * known_b + &rb0q * &uk;
        phi = lu.solve(&rhs).ok_or_else(|| Error::Singular("first-order step matrix".into()))?;
        u = uk + &phi * c(alpha);
        conv_c.push(&phi);
        conv_b.push(&(&q * &u));
        out.row_mut(n).copy_from(&u.transpose());
        let scale = 1e3 * (1.0 + u0.norm() + fmax * (t - t0 + 1.0));
        Guard { scale, rate: cfg.growth_limit, t0 }.check(&u, t)?;
    }
    Ok(TimeSeries { t_start: t0, dt: h, values: out, warnings })
}

pub fn step_parabolic(
    law: &MaterialLaw,
    op: &BlockOperator,
    u0: &CVec,
    f: Forcing<'_>,
    cfg: &SteppingConfig,
) -> Result<TimeSeries> {
    if !matches!(law.kind, LawKind::Parabolic { .. }) {
        return Err(Error::InvalidInput("step_parabolic needs a parabolic law".into()));
    }
    step_first_order(law, op, u0, f, cfg)
}

pub fn step_vlasov(
    law: &MaterialLaw,
    op: &BlockOperator,
    u0: &CVec,
    f: Forcing<'_>,
    cfg: &SteppingConfig,
) -> Result<TimeSeries> {
    if !matches!(law.kind, LawKind::Vlasov { .. }) {
        return Err(Error::InvalidInput("step_vlasov needs a Vlasov law".into()));
    }
    step_first_order(law, op, u0, f, cfg)
}

/// Exact state-space reduction for exponential-sum kernels.
pub mod augmented {
    use super::*;

    fn terms(k: &Kernel) -> Result<Vec<(CMat, f64)>> {
        match &k.form {
            KernelForm::ExpSum(t) => Ok(t.iter().filter(|t| crate::linalg::max_abs(&t.coeff) > 0.0).map(|t| (t.coeff.clone(), t.rate)).collect()),
            KernelForm::Sampled { .. } => Err(Error::Unsupported("augmented reduction needs exponential-sum kernels".into())),
        }
    }

    /// `y' = G y + b(t)`, with `y₀` and an output map `y ↦ Ey`.
    struct Linear<'a> {
        g: CMat,
        y0: CVec,
        forcing: Box<dyn Fn(f64) -> Result<CVec> + 'a>,
        out: CMat,
    }

    /// Exponential integrator with trapezoid forcing, `substeps` per output
    /// step.
    fn integrate(sys: &Linear<'_>, cfg: &SteppingConfig, substeps: usize) -> Result<TimeSeries> {
        let steps = cfg.steps()?;
        let h = cfg.dt / substeps as f64;
        let e = (&sys.g * c(h)).exp();
        let mut y = sys.y0.clone();
        let mut out = DMatrix::<C64>::zeros(steps + 1, sys.out.nrows());
        out.row_mut(0).copy_from(&(&sys.out * &y).transpose());
        let mut t = cfg.t_start;
        let mut b_prev = (sys.forcing)(t)?;
        for n in 1..=steps {
            for s in 1..=substeps {
                let tn = cfg.t_start + ((n - 1) * substeps + s) as f64 * h;
                let b_next = (sys.forcing)(tn)?;
                y = &e * (y + &b_prev * c(0.5 * h)) + &b_next * c(0.5 * h);
                b_prev = b_next;
                t = tn;
            }
            if !y.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::Unstable(format!("augmented state non-finite at t = {t}")));
            }
            out.row_mut(n).copy_from(&(&sys.out * &y).transpose());
        }
        Ok(TimeSeries { t_start: cfg.t_start, dt: cfg.dt, values: out, warnings: Vec::new() })
    }

    /// Hyperbolic problem with states `(v, P, Y_j, Z_j)`,
    /// `Y_j = ∫e^{−c_j(t−s)}φ`, `Z_j = ∫e^{−b_j(t−s)}P`.
    pub fn hyperbolic(
        law: &MaterialLaw,
        op: &BlockOperator,
        v0: &CVec,
        q0: &CVec,
        f: Forcing<'_>,
        g: Forcing<'_>,
        cfg: &SteppingConfig,
        substeps: usize,
    ) -> Result<TimeSeries> {
        let LawKind::Hyperbolic { b, c: ck } = &law.kind else {
            return Err(Error::InvalidInput("augmented::hyperbolic needs a hyperbolic law".into()));
        };
        let (d0, d1) = law.dims;
        let (cs, bs) = (terms(ck)?, terms(b)?);
        let (a, a_star) = (&op.a, &op.a_star);
        let (ny, nz) = (cs.len() * d0, bs.len() * d1);
        let n = d0 + d1 + ny + nz;
        let (iv, ip, iy, iz) = (0, d0, d0 + d1, d0 + d1 + ny);
        // φ = f − A*q₀ + Φ y,   Φ = [0, −A*, −C_j, A*B_j]
        let mut phi_map = CMat::zeros(d0, n);
        phi_map.view_mut((0, ip), (d0, d1)).copy_from(&(-a_star));
        for (j, (cj, _)) in cs.iter().enumerate() {
            phi_map.view_mut((0, iy + j * d0), (d0, d0)).copy_from(&(-cj));
        }
        for (j, (bj, _)) in bs.iter().enumerate() {
            phi_map.view_mut((0, iz + j * d1), (d0, d1)).copy_from(&(a_star * bj));
        }
        let mut gm = CMat::zeros(n, n);
        gm.view_mut((iv, 0), (d0, n)).copy_from(&phi_map);
        gm.view_mut((ip, iv), (d1, d0)).copy_from(a);
        for (j, (_, rate)) in cs.iter().enumerate() {
            let row = iy + j * d0;
            gm.view_mut((row, 0), (d0, n)).copy_from(&phi_map);
            let mut blk = gm.view_mut((row, row), (d0, d0));
            blk -= CMat::identity(d0, d0) * c(*rate);
        }
        for (j, (_, rate)) in bs.iter().enumerate() {
            let row = iz + j * d1;
            gm.view_mut((row, ip), (d1, d1)).copy_from(&CMat::identity(d1, d1));
            gm.view_mut((row, row), (d1, d1)).copy_from(&(CMat::identity(d1, d1) * c(-*rate)));
        }
        let mut y0 = CVec::zeros(n);
        y0.rows_mut(iv, d0).copy_from(v0);
        // q = q₀ + P − Σ B_j Z_j
        let mut out = CMat::zeros(d0 + d1, n);
        out.view_mut((0, iv), (d0, d0)).copy_from(&CMat::identity(d0, d0));
        out.view_mut((d0, ip), (d1, d1)).copy_from(&CMat::identity(d1, d1));
        for (j, (bj, _)) in bs.iter().enumerate() {
            out.view_mut((d0, iz + j * d1), (d1, d1)).copy_from(&(-bj));
        }
        let q0c = q0.clone();
        let ncs = cs.len();
        let forcing = move |t: f64| -> Result<CVec> {
            let base = eval(f, t, d0)? - a_star * &q0c;
            let mut bv = CVec::zeros(n);
            bv.rows_mut(iv, d0).copy_from(&base);
            bv.rows_mut(ip, d1).copy_from(&eval(g, t, d1)?);
            for j in 0..ncs {
                bv.rows_mut(iy + j * d0, d0).copy_from(&base);
            }
            Ok(bv)
        };
        let sys = Linear { g: gm, y0, forcing: Box::new(forcing), out };
        let mut ts = integrate(&sys, cfg, substeps)?;
        // the output map misses the constant q₀
        for k in 0..ts.len() {
            let mut r = ts.values.view_mut((k, d0), (1, d1));
            r += q0.transpose();
        }
        Ok(ts)
    }

    /// First-order problem with states `(u, Y_j, Z_j)`, `Z_j = ∫e^{−b_j(t−s)}Qu`.
    pub fn first_order(
        law: &MaterialLaw,
        op: &BlockOperator,
        u0: &CVec,
        f: Forcing<'_>,
        cfg: &SteppingConfig,
        substeps: usize,
    ) -> Result<TimeSeries> {
        let (b, ck) = law_kernels(law)?;
        let (l, r, q) = first_order_operators(law, op)?;
        let d = l.nrows();
        let db = q.nrows();
        let (cs, bs) = (terms(ck)?, terms(b)?);
        let (ny, nz) = (cs.len() * d, bs.len() * db);
        let n = d + ny + nz;
        let (iy, iz) = (d, d + ny);
        // φ = f + Φ y,   Φ = [−L, −C_j, R B_j]
        let mut phi_map = CMat::zeros(d, n);
        phi_map.view_mut((0, 0), (d, d)).copy_from(&(-&l));
        for (j, (cj, _)) in cs.iter().enumerate() {
            phi_map.view_mut((0, iy + j * d), (d, d)).copy_from(&(-cj));
        }
        for (j, (bj, _)) in bs.iter().enumerate() {
            phi_map.view_mut((0, iz + j * db), (d, db)).copy_from(&(&r * bj));
        }
        let mut gm = CMat::zeros(n, n);
        gm.view_mut((0, 0), (d, n)).copy_from(&phi_map);
        for (j, (_, rate)) in cs.iter().enumerate() {
            let row = iy + j * d;
            gm.view_mut((row, 0), (d, n)).copy_from(&phi_map);
            let mut blk = gm.view_mut((row, row), (d, d));
            blk -= CMat::identity(d, d) * c(*rate);
        }
        for (j, (_, rate)) in bs.iter().enumerate() {
            let row = iz + j * db;
            gm.view_mut((row, 0), (db, d)).copy_from(&q);
            gm.view_mut((row, row), (db, db)).copy_from(&(CMat::identity(db, db) * c(-*rate)));
        }
        let mut y0 = CVec::zeros(n);
        y0.rows_mut(0, d).copy_from(u0);
        let mut out = CMat::zeros(d, n);
        out.view_mut((0, 0), (d, d)).copy_from(&CMat::identity(d, d));
        let ncs = cs.len();
        let forcing = move |t: f64| -> Result<CVec> {
            let fv = eval(f, t, d)?;
            let mut bv = CVec::zeros(n);
            bv.rows_mut(0, d).copy_from(&fv);
            for j in 0..ncs {
                bv.rows_mut(iy + j * d, d).copy_from(&fv);
            }
            Ok(bv)
        };
        integrate(&Linear { g: gm, y0, forcing: Box::new(forcing), out }, cfg, substeps)
    }
}

/// Error metrics between a spectral solution and an oracle run, evaluated at
/// the oracle nodes strictly after its start (the start node is a jump for
/// the spectral solution).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Comparison {
    pub nu: f64,
    pub weighted_l2_relative: f64,
    pub max_pointwise: f64,
    pub nodes_compared: usize,
}

pub fn compare(spectral: &WeightedSignal, oracle: &TimeSeries) -> Result<Comparison> {
    if spectral.dim() != oracle.dim() {
        return Err(Error::DimensionMismatch { context: "compare", expected: oracle.dim(), got: spectral.dim() });
    }
    let g = spectral.grid;
    let nu = spectral.nu;
    let (mut num, mut den, mut maxe) = (0.0, 0.0, 0.0f64);
    let mut count = 0;
    for n in 1..oracle.len() {
        let t = oracle.time(n);
        let x = (t - g.t_start) / g.dt;
        if x < 0.0 || x > (g.n - 1) as f64 {
            continue;
        }
        let j = (x.floor() as usize).min(g.n - 2);
        let fr = x - j as f64;
        let s = spectral.value(j) * c(1.0 - fr) + spectral.value(j + 1) * c(fr);
        let o = oracle.value(n);
        let w = (-2.0 * nu * t).exp();
        let e = (&s - &o).norm();
        num += w * e * e;
        den += w * o.norm_squared();
        maxe = maxe.max(e);
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput("spectral grid and oracle window do not overlap".into()));
    }
    Ok(Comparison {
        nu,
        weighted_l2_relative: if den > 0.0 { (num / den).sqrt() } else { num.sqrt() },
        max_pointwise: maxe,
        nodes_compared: count,
    })
}
