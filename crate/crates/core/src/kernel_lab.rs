//! Matrix-valued memory kernels `B: [0,∞) → ℂ^{d×d}` in `L_{1,μ}`, their
//! half-plane Fourier transforms and weighted `L₁` norms, and sampled checks
//! of the three structural hypotheses (pointwise selfadjointness, pairwise
//! commutativity, and the sign condition `t·Im B̂(t−iν₀) ≤ 0`).
//!
//! Transforms follow the unitary convention
//! `B̂(t−iν) = (2π)^{-1/2} ∫₀^∞ e^{−its} e^{−νs} B(s) ds`; most callers want
//! the normalized symbol `√(2π)·B̂`, which is what [`Kernel::symbol`] returns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    asymmetry, c, commutator, imaginary_part, lambda_max, max_abs, op_norm, CMat, C64, I,
};
use crate::weighted_time::{
    fourier_laplace, inverse_fourier_laplace, sqrt_2pi, TimeGrid, WeightedSignal,
};

/// One term `K·e^{−a t}` of an exponential sum.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpTerm {
    pub coeff: CMat,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelForm {
    ExpSum(Vec<ExpTerm>),
    /// Values at `j·dt`, `j = 0..len`, linearly interpolated between nodes
    /// and zero past the last node.
    Sampled { dt: f64, values: Vec<CMat> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub dim: usize,
    pub form: KernelForm,
    pub mu: f64,
}

fn check_matrix(m: &CMat, dim: usize, what: &'static str) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::DimensionMismatch { context: what, expected: dim, got: m.nrows() });
    }
    if !crate::linalg::is_finite(m) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

impl Kernel {
    pub fn zero(dim: usize) -> Self {
        Self { dim, form: KernelForm::ExpSum(Vec::new()), mu: 0.0 }
    }

    /// Exponential sum; `μ` is the smallest nonnegative weight at which every
    /// term is integrable (`a_j + μ ≥ 0`).
    pub fn exp_sum(dim: usize, terms: Vec<ExpTerm>) -> Result<Self> {
        let mut mu: f64 = 0.0;
        for t in &terms {
            check_matrix(&t.coeff, dim, "kernel coefficient")?;
            if !t.rate.is_finite() {
                return Err(Error::NonFinite("kernel rate"));
            }
            mu = mu.max(-t.rate);
        }
        Ok(Self { dim, form: KernelForm::ExpSum(terms), mu })
    }

    /// Scalar kernel `k·e^{−a t}`.
    pub fn scalar_exp(k: f64, a: f64) -> Self {
        Self::exp_sum(1, vec![ExpTerm { coeff: CMat::from_element(1, 1, c(k)), rate: a }])
            .expect("finite scalar kernel")
    }

    /// Single-term matrix kernel `K·e^{−a t}`.
    pub fn matrix_exp(coeff: CMat, a: f64) -> Result<Self> {
        Self::exp_sum(coeff.nrows(), vec![ExpTerm { coeff, rate: a }])
    }

    pub fn sampled(dt: f64, values: Vec<CMat>, mu: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidGrid(format!("kernel dt must be positive, got {dt}")));
        }
        if values.len() < 2 {
            return Err(Error::InvalidGrid("a sampled kernel needs at least two nodes".into()));
        }
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidInput(format!("declared mu must be ≥ 0, got {mu}")));
        }
        let dim = values[0].nrows();
        for v in &values {
            check_matrix(v, dim, "sampled kernel value")?;
        }
        Ok(Self { dim, form: KernelForm::Sampled { dt, values }, mu })
    }

    /// The 1×1 kernel `k` when every value is `k(t)·1`, `None` otherwise.
    pub fn as_scalar(&self) -> Option<Kernel> {
        let sc = |m: &CMat| if self.dim == 0 { None } else { crate::linalg::scalar_identity(m) };
        let form = match &self.form {
            KernelForm::ExpSum(terms) => KernelForm::ExpSum(
                terms
                    .iter()
                    .map(|t| sc(&t.coeff).map(|k| ExpTerm { coeff: CMat::from_element(1, 1, k), rate: t.rate }))
                    .collect::<Option<Vec<_>>>()?,
            ),
            KernelForm::Sampled { dt, values } => KernelForm::Sampled {
                dt: *dt,
                values: values.iter().map(|v| sc(v).map(|k| CMat::from_element(1, 1, k))).collect::<Option<Vec<_>>>()?,
            },
        };
        Some(Kernel { dim: 1, form, mu: self.mu })
    }

    /// Samples `self` on `[0, t_end]` with step `dt`.
    pub fn to_sampled(&self, dt: f64, t_end: f64) -> Result<Self> {
        let n = (t_end / dt).round() as usize + 1;
        let values = (0..n).map(|j| self.value_at(j as f64 * dt)).collect();
        Self::sampled(dt, values, self.mu)
    }

    pub fn is_zero(&self) -> bool {
        match &self.form {
            KernelForm::ExpSum(terms) => terms.iter().all(|t| max_abs(&t.coeff) == 0.0),
            KernelForm::Sampled { values, .. } => values.iter().all(|v| max_abs(v) == 0.0),
        }
    }

    pub fn value_at(&self, t: f64) -> CMat {
        let d = self.dim;
        if t < 0.0 {
            return CMat::zeros(d, d);
        }
        match &self.form {
            KernelForm::ExpSum(terms) => terms
                .iter()
                .fold(CMat::zeros(d, d), |acc, term| acc + &term.coeff * c((-term.rate * t).exp())),
            KernelForm::Sampled { dt, values } => {
                let x = t / dt;
                let j = x.floor() as usize;
                if j + 1 >= values.len() {
                    return if j + 1 == values.len() && (x - j as f64) < 1e-12 {
                        values[j].clone()
                    } else {
                        CMat::zeros(d, d)
                    };
                }
                let f = x - j as f64;
                &values[j] * c(1.0 - f) + &values[j + 1] * c(f)
            }
        }
    }

    fn check_weight(&self, nu: f64) -> Result<()> {
        if !nu.is_finite() || nu < self.mu {
            return Err(Error::InvalidWeight {
                nu,
                reason: format!("weight below the kernel's growth bound mu = {}", self.mu),
            });
        }
        Ok(())
    }

    /// Normalized symbol `√(2π)·B̂(t − iν) = ∫₀^∞ e^{−(ν+it)s} B(s) ds`.
    pub fn symbol(&self, t: f64, nu: f64) -> Result<CMat> {
        self.check_weight(nu)?;
        Ok(self.symbol_unchecked(I * t + nu))
    }

    /// `∫₀^∞ e^{−zs} B(s) ds` at a complex point `z` with `Re z ≥ μ`.
    pub fn symbol_at(&self, z: C64) -> CMat {
        self.symbol_unchecked(z)
    }

    fn symbol_unchecked(&self, z: C64) -> CMat {
        let d = self.dim;
        match &self.form {
            KernelForm::ExpSum(terms) => terms
                .iter()
                .fold(CMat::zeros(d, d), |acc, term| acc + &term.coeff * (z + term.rate).inv()),
            KernelForm::Sampled { dt, values } => {
                // trapezoid with half weights at both ends
                let step = (-z * *dt).exp();
                let mut w = c(1.0);
                let mut acc = CMat::zeros(d, d);
                let last = values.len() - 1;
                for (j, v) in values.iter().enumerate() {
                    let h = if j == 0 || j == last { 0.5 } else { 1.0 };
                    acc += v * (w * h);
                    w *= step;
                }
                acc * c(*dt)
            }
        }
    }

    /// Unitary transform `B̂(t − iν)`.
    pub fn fourier_transform(&self, t: f64, nu: f64) -> Result<CMat> {
        Ok(self.symbol(t, nu)? / c(sqrt_2pi()))
    }

    /// Normalized symbol at every frequency node of `grid`.
    pub fn symbols_on_grid(&self, grid: &TimeGrid, nu: f64) -> Result<Vec<CMat>> {
        self.check_weight(nu)?;
        if let KernelForm::Sampled { dt, values } = &self.form {
            if (dt - grid.dt).abs() <= 1e-12 * grid.dt && values.len() <= grid.n {
                return Ok(self.sampled_symbols_fft(grid, nu, values));
            }
        }
        Ok((0..grid.n)
            .into_par_iter()
            .map(|k| self.symbol_unchecked(I * grid.frequency(k) + nu))
            .collect())
    }

    fn sampled_symbols_fft(&self, grid: &TimeGrid, nu: f64, values: &[CMat]) -> Vec<CMat> {
        let d = self.dim;
        let n = grid.n;
        let last = values.len() - 1;
        let mut out = vec![CMat::zeros(d, d); n];
        let fft = rustfft::FftPlanner::new().plan_fft_forward(n);
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for r in 0..d {
            for s in 0..d {
                buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                for (j, v) in values.iter().enumerate() {
                    let h = if j == 0 || j == last { 0.5 } else { 1.0 };
                    buf[j] = v[(r, s)] * (h * grid.dt * (-nu * j as f64 * grid.dt).exp());
                }
                fft.process(&mut buf);
                for k in 0..n {
                    out[k][(r, s)] = buf[k];
                }
            }
        }
        out
    }

    /// `|B|_{L_{1,ν}} = ∫₀^∞ e^{−νt}‖B(t)‖ dt`.
    pub fn l1nu_norm(&self, nu: f64) -> Result<f64> {
        self.check_weight(nu)?;
        match &self.form {
            KernelForm::ExpSum(terms) => {
                let terms: Vec<&ExpTerm> = terms.iter().filter(|t| max_abs(&t.coeff) > 0.0).collect();
                if terms.is_empty() {
                    return Ok(0.0);
                }
                let slowest = terms.iter().map(|t| t.rate + nu).fold(f64::INFINITY, f64::min);
                if slowest <= 0.0 {
                    return Err(Error::InvalidWeight {
                        nu,
                        reason: "kernel is not integrable at this weight".into(),
                    });
                }
                if terms.len() == 1 {
                    return Ok(op_norm(&terms[0].coeff) / (terms[0].rate + nu));
                }
                let fastest = terms.iter().map(|t| t.rate + nu).fold(0.0, f64::max);
                let bound: f64 = terms.iter().map(|t| op_norm(&t.coeff) / (t.rate + nu)).sum();
                Ok(integrate_decaying(|s| e_norm(&terms, s, nu), slowest, fastest, bound))
            }
            KernelForm::Sampled { dt, values } => {
                let last = values.len() - 1;
                let sum: f64 = values
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let h = if j == 0 || j == last { 0.5 } else { 1.0 };
                        h * op_norm(v) * (-nu * j as f64 * dt).exp()
                    })
                    .sum();
                Ok(sum * dt)
            }
        }
    }

    /// For sampled kernels, an estimate of the mass cut off at the last node
    /// assuming `‖B(t)‖ ≤ ‖B(T)‖e^{μ(t−T)}` beyond it. Zero for exponential sums,
    /// whose norms are computed over the whole half-line.
    pub fn truncation_tail(&self, nu: f64) -> f64 {
        match &self.form {
            KernelForm::ExpSum(_) => 0.0,
            KernelForm::Sampled { dt, values } => {
                let t_end = (values.len() - 1) as f64 * dt;
                let last = op_norm(&values[values.len() - 1]);
                if last == 0.0 {
                    0.0
                } else if nu > self.mu {
                    last * (-nu * t_end).exp() / (nu - self.mu)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `B^{(m)}(0⁺)`. Exact for exponential sums, one-sided differences of
    /// third order for sampled kernels.
    pub fn derivative_at_zero(&self, m: usize) -> CMat {
        let d = self.dim;
        match &self.form {
            KernelForm::ExpSum(terms) => terms.iter().fold(CMat::zeros(d, d), |acc, t| {
                acc + &t.coeff * c((-t.rate).powi(m as i32))
            }),
            KernelForm::Sampled { dt, values } => {
                if m == 0 {
                    return values[0].clone();
                }
                let get = |j: usize| values.get(j).cloned().unwrap_or_else(|| CMat::zeros(d, d));
                let v: Vec<CMat> = (0..5).map(get).collect();
                let d1 = |k: usize| &v[k + 1] - &v[k];
                let d2 = |k: usize| d1(k + 1) - d1(k);
                let d3 = |k: usize| d2(k + 1) - d2(k);
                let d4 = d3(1) - d3(0);
                let h = *dt;
                match m {
                    1 => (d1(0) - d2(0) * c(0.5) + d3(0) * c(1.0 / 3.0)) / c(h),
                    2 => (d2(0) - d3(0) + &d4 * c(11.0 / 12.0)) / c(h * h),
                    3 => (d3(0) - &d4 * c(1.5)) / c(h * h * h),
                    _ => CMat::zeros(d, d),
                }
            }
        }
    }

    /// The derivative kernel `G = B'` on `(0,∞)`, so that
    /// `B(t) = B(0) + ∫₀^t G`.
    pub fn derivative_kernel(&self) -> Result<Kernel> {
        match &self.form {
            KernelForm::ExpSum(terms) => {
                let terms = terms
                    .iter()
                    .map(|t| ExpTerm { coeff: &t.coeff * c(-t.rate), rate: t.rate })
                    .collect();
                Kernel::exp_sum(self.dim, terms)
            }
            KernelForm::Sampled { dt, values } => {
                let n = values.len();
                let g = (0..n)
                    .map(|j| {
                        if j == 0 {
                            (&values[1] - &values[0]) / c(*dt)
                        } else if j == n - 1 {
                            (&values[n - 1] - &values[n - 2]) / c(*dt)
                        } else {
                            (&values[j + 1] - &values[j - 1]) / c(2.0 * dt)
                        }
                    })
                    .collect();
                Kernel::sampled(*dt, g, self.mu)
            }
        }
    }

    /// Largest coefficient scale, used to make tolerances relative.
    fn scale(&self) -> f64 {
        match &self.form {
            KernelForm::ExpSum(terms) => terms.iter().map(|t| op_norm(&t.coeff)).fold(0.0, f64::max),
            KernelForm::Sampled { values, .. } => values.iter().map(max_abs).fold(0.0, f64::max),
        }
    }

    /// Coefficients summed over equal rates. Distinct exponentials are
    /// linearly independent, so pointwise properties of `B(t)` reduce to
    /// properties of these sums.
    fn grouped_coefficients(terms: &[ExpTerm], dim: usize) -> Vec<CMat> {
        let mut groups: Vec<(f64, CMat)> = Vec::new();
        for t in terms {
            match groups
                .iter_mut()
                .find(|(a, _)| (a - t.rate).abs() <= 1e-14 * a.abs().max(1.0))
            {
                Some((_, m)) => *m += &t.coeff,
                None => groups.push((t.rate, t.coeff.clone())),
            }
        }
        groups.into_iter().map(|(_, m)| m).filter(|m| m.nrows() == dim).collect()
    }
}

fn e_norm(terms: &[&ExpTerm], s: f64, nu: f64) -> f64 {
    let d = terms[0].coeff.nrows();
    let m = terms
        .iter()
        .fold(CMat::zeros(d, d), |acc, t| acc + &t.coeff * c((-t.rate * s).exp()));
    op_norm(&m) * (-nu * s).exp()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `∫₀^∞ f` for `f` decaying at least like `e^{−slowest·s}` and varying on
/// scales no shorter than `1/fastest`: adaptive Gauss–Legendre on growing
/// panels (the norm may have kinks where eigenvalues cross).
fn integrate_decaying(f: impl Fn(f64) -> f64, slowest: f64, fastest: f64, scale: f64) -> f64 {
    let tol = 1e-15 * scale;
    let (x, w) = gauss_legendre(12);
    let rule = |a: f64, b: f64| {
        let half = 0.5 * (b - a);
        x.iter().zip(&w).map(|(xi, wi)| wi * f(a + half * (xi + 1.0))).sum::<f64>() * half
    };
    fn adapt(rule: &dyn Fn(f64, f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (l, r) = (rule(a, m), rule(m, b));
        if depth == 0 || (l + r - whole).abs() <= tol {
            l + r
        } else {
            adapt(rule, a, m, l, 0.5 * tol, depth - 1) + adapt(rule, m, b, r, 0.5 * tol, depth - 1)
        }
    }
    let t_end = 45.0 / slowest;
    let mut a = 0.0;
    let mut h = 0.25 / fastest;
    let mut total = 0.0;
    while a < t_end {
        let b = a + h;
        total += adapt(&rule, a, b, rule(a, b), tol, 30);
        a = b;
        h = (h * 1.5).min(0.5 / slowest).max(h);
    }
    total
}

/// Frequency sampling used by the sign check and the certificates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub count: usize,
    /// Side of the grid of time pairs used for sampled commutativity checks.
    pub pair_grid: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self { t_min: 1e-3, t_max: 1e3, count: 512, pair_grid: 32 }
    }
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_max > self.t_min) || self.count < 2 {
            return Err(Error::InvalidInput(format!(
                "sample spec needs 0 < t_min < t_max and count ≥ 2, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Log-spaced positive frequencies.
    pub fn positive_frequencies(&self) -> Vec<f64> {
        let (l0, l1) = (self.t_min.ln(), self.t_max.ln());
        (0..self.count)
            .map(|i| (l0 + (l1 - l0) * i as f64 / (self.count - 1) as f64).exp())
            .collect()
    }

    /// `0` plus the positive frequencies and their negatives.
    pub fn symmetric_frequencies(&self) -> Vec<f64> {
        let pos = self.positive_frequencies();
        let mut all = vec![0.0];
        all.extend(pos.iter().map(|t| -t));
        all.extend(pos);
        all
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub selfadjoint_ok: bool,
    pub max_asymmetry: f64,
    pub commute_ok: bool,
    pub max_commutator: f64,
    pub nu0: f64,
    pub sign_ok: bool,
    /// Largest eigenvalue of `t·Im B̂(t − iν₀)` over the sampled `t > 0`.
    pub worst_sign: f64,
    pub sign_tolerance: f64,
    pub sample_spec: SampleSpec,
}

impl HypothesisReport {
    pub fn all_ok(&self) -> bool {
        self.selfadjoint_ok && self.commute_ok && self.sign_ok
    }
}

/// Largest eigenvalue of `t·Im B̂(t − iν)` over the sampled `t > 0`.
pub fn worst_sign_value(k: &Kernel, nu: f64, spec: &SampleSpec) -> Result<f64> {
    k.check_weight(nu)?;
    spec.validate()?;
    let ts = spec.positive_frequencies();
    let vals: Vec<f64> = ts
        .par_iter()
        .map(|&t| {
            let b = k.symbol_unchecked(I * t + nu) / c(sqrt_2pi());
            lambda_max(&(imaginary_part(&b) * c(t)))
        })
        .collect();
    Ok(vals.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

fn sign_tolerance(k: &Kernel, nu: f64) -> Result<f64> {
    Ok(1e-10 * k.l1nu_norm(nu)?)
}

pub fn check_hypotheses(k: &Kernel, nu0: f64, spec: &SampleSpec) -> Result<HypothesisReport> {
    let scale = k.scale().max(f64::MIN_POSITIVE);
    let (max_asym, max_comm) = match &k.form {
        KernelForm::ExpSum(terms) => {
            let groups = Kernel::grouped_coefficients(terms, k.dim);
            let asym = groups.iter().map(asymmetry).fold(0.0, f64::max);
            let mut comm: f64 = 0.0;
            for (i, a) in groups.iter().enumerate() {
                for b in &groups[i + 1..] {
                    comm = comm.max(max_abs(&commutator(a, b)));
                }
            }
            (asym, comm)
        }
        KernelForm::Sampled { values, .. } => {
            let asym = values.iter().map(asymmetry).fold(0.0, f64::max);
            let m = spec.pair_grid.max(1).min(values.len());
            let picks: Vec<usize> =
                (0..m).map(|i| i * (values.len() - 1) / (m - 1).max(1)).collect();
            let comm = picks
                .par_iter()
                .map(|&i| {
                    picks
                        .iter()
                        .map(|&j| max_abs(&commutator(&values[i], &values[j])))
                        .fold(0.0, f64::max)
                })
                .collect::<Vec<_>>()
                .into_iter()
                .fold(0.0, f64::max);
            (asym, comm)
        }
    };
    let worst = worst_sign_value(k, nu0, spec)?;
    let tol = sign_tolerance(k, nu0)?;
    Ok(HypothesisReport {
        selfadjoint_ok: max_asym <= 1e-12 * scale,
        max_asymmetry: max_asym,
        commute_ok: max_comm <= 1e-12 * scale * scale,
        max_commutator: max_comm,
        nu0,
        sign_ok: worst <= tol,
        worst_sign: worst,
        sign_tolerance: tol,
        sample_spec: spec.clone(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropagationReport {
    pub passed: bool,
    /// Largest eigenvalue of `t·Im B̂(t − iν)` over all sampled `t` and `ν`.
    pub worst: f64,
    pub per_nu: Vec<(f64, f64)>,
}

/// Re-runs the sign check at each weight in `nus` (all `≥ ν₀`) for a kernel
/// that satisfies all three hypotheses at `ν₀`.
pub fn verify_nu_propagation(
    k: &Kernel,
    nu0: f64,
    nus: &[f64],
    spec: &SampleSpec,
) -> Result<PropagationReport> {
    if let Some(bad) = nus.iter().find(|&&nu| !(nu >= nu0)) {
        return Err(Error::InvalidInput(format!("weight {bad} is below nu0 = {nu0}")));
    }
    let base = check_hypotheses(k, nu0, spec)?;
    if !base.all_ok() {
        return Err(Error::HypothesesFailed(format!(
            "kernel fails the hypotheses at nu0 = {nu0} (selfadjoint {}, commuting {}, sign {})",
            base.selfadjoint_ok, base.commute_ok, base.sign_ok
        )));
    }
    let mut per_nu = Vec::with_capacity(nus.len());
    let mut passed = true;
    let mut worst = f64::NEG_INFINITY;
    for &nu in nus {
        let w = worst_sign_value(k, nu, spec)?;
        passed &= w <= sign_tolerance(k, nu)?;
        worst = worst.max(w);
        per_nu.push((nu, w));
    }
    Ok(PropagationReport { passed, worst, per_nu })
}

/// Lower bound `ν − (|G|_{1,ν} + ‖B(0)‖)/(1 − |B|_{1,ν})` for
/// `Re z^{−1}(1 − √(2π)B̂)^{−1}` with `z^{−1} = it + ν`, valid for absolutely
/// continuous kernels.
pub fn ac_lower_bound(k: &Kernel, nu: f64) -> Result<f64> {
    let b = k.l1nu_norm(nu)?;
    if b >= 1.0 {
        return Err(Error::NormTooLarge { nu, norm: b });
    }
    let g = k.derivative_kernel()?.l1nu_norm(nu)?;
    let b0 = op_norm(&k.value_at(0.0));
    Ok(nu - (g + b0) / (1.0 - b))
}

/// Smallest weight (to bisection accuracy) with `|B|_{1,ν} < target`,
/// searched in `[μ, 10⁶]`.
pub fn neumann_threshold(k: &Kernel, target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidInput(format!("target must lie in (0,1), got {target}")));
    }
    let ok = |nu: f64| k.l1nu_norm(nu).map(|n| n < target).unwrap_or(false);
    let mut lo = k.mu;
    let mut hi = 1e6;
    if ok(lo) {
        return Ok(lo);
    }
    if !ok(hi) {
        return Err(Error::SearchFailed(format!(
            "no weight in [{lo}, {hi}] brings the kernel norm below {target}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(hi)
}

/// `(B∗u)(t) = ∫₀^∞ B(s)u(t−s) ds` in the time domain, with `u` taken as
/// zero before the window. Exponential sums use an exact recursion with a
/// cubic local rule (fourth order); sampled kernels use the trapezoid rule.
pub fn convolve(k: &Kernel, u: &WeightedSignal) -> Result<WeightedSignal> {
    if u.dim() != k.dim {
        return Err(Error::DimensionMismatch { context: "convolution", expected: k.dim, got: u.dim() });
    }
    let g = u.grid;
    let n = g.n;
    let d = k.dim;
    let mut out = nalgebra::DMatrix::<C64>::zeros(n, d);
    let rows: Vec<nalgebra::DVector<C64>> = (0..n).map(|j| u.value(j)).collect();
    match &k.form {
        KernelForm::ExpSum(terms) => {
            let (gx, gw) = gauss_legendre(8);
            for term in terms {
                // local weights ∫₀^{dt} e^{−as} ℓ_i(s) ds for the cubic through
                // s = 0, dt, 2dt, 3dt
                let mut w = [0.0; 4];
                for (x, wx) in gx.iter().zip(&gw) {
                    let s = 0.5 * (x + 1.0);
                    let e = (-term.rate * s * g.dt).exp() * wx * 0.5 * g.dt;
                    let l = [
                        (s - 1.0) * (s - 2.0) * (s - 3.0) / -6.0,
                        s * (s - 2.0) * (s - 3.0) / 2.0,
                        s * (s - 1.0) * (s - 3.0) / -2.0,
                        s * (s - 1.0) * (s - 2.0) / 6.0,
                    ];
                    for i in 0..4 {
                        w[i] += e * l[i];
                    }
                }
                let decay = (-term.rate * g.dt).exp();
                let mut y = nalgebra::DVector::<C64>::zeros(d);
                for j in 0..n {
                    let mut local = nalgebra::DVector::<C64>::zeros(d);
                    for (i, wi) in w.iter().enumerate() {
                        if j >= i {
                            local += &rows[j - i] * c(*wi);
                        }
                    }
                    y = &y * c(decay) + &term.coeff * local;
                    let mut row = out.row_mut(j);
                    row += y.transpose();
                }
            }
        }
        KernelForm::Sampled { dt, values } => {
            if (dt - g.dt).abs() > 1e-12 * g.dt {
                return Err(Error::InvalidGrid(
                    "sampled kernel step must match the signal step".into(),
                ));
            }
            let last = values.len() - 1;
            for j in 0..n {
                let mut acc = nalgebra::DVector::<C64>::zeros(d);
                let m_max = j.min(last);
                for m in 0..=m_max {
                    let h = if m == 0 || m == j || m == last { 0.5 } else { 1.0 };
                    acc += &values[m] * &rows[j - m] * c(h);
                }
                out.row_mut(j).copy_from(&(acc * c(g.dt)).transpose());
            }
        }
    }
    WeightedSignal::new(g, u.nu, out)
}

/// `B∗u` realized as the spectral multiplier `√(2π)B̂(t − iν)`.
pub fn convolve_spectral(k: &Kernel, u: &WeightedSignal) -> Result<WeightedSignal> {
    if u.dim() != k.dim {
        return Err(Error::DimensionMismatch { context: "convolution", expected: k.dim, got: u.dim() });
    }
    let mut s = fourier_laplace(u)?;
    let sym = k.symbols_on_grid(&u.grid, u.nu)?;
    for (kk, m) in sym.iter().enumerate() {
        let v = m * s.value(kk);
        s.values.row_mut(kk).copy_from(&v.transpose());
    }
    inverse_fourier_laplace(&s)
}
