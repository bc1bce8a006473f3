//! Sampled model of the exponentially weighted space `H_{ν,0}(ℝ; ℂ^d)` and
//! its unitary Fourier–Laplace transform.
//!
//! A [`WeightedSignal`] stores samples `u(t_j)` on a uniform [`TimeGrid`]
//! together with the weight `ν`. The transform is the discrete version of
//!
//! ```text
//! (L_ν u)(t) = (2π)^{-1/2} ∫ e^{-ist} e^{-νs} u(s) ds
//! ```
//!
//! scaled by `dt/√(2π)` so that continuum transforms of well-resolved,
//! well-decayed signals are reproduced. The frequency nodes are the standard
//! FFT nodes `t_k = 2π k / (n·dt)` in FFT order, and `∂_{0,ν}` acts on the
//! spectrum as multiplication by `i t_k + ν`.
//!
//! Signals with a jump are sampled with the mid-value at the jump node
//! (`χ_{[0,∞)}(0) = ½`); this keeps the trapezoid rule second order.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::{CVec, C64, I};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub dt: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, dt: f64, n: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 samples, got {n}")));
        }
        if !t_start.is_finite() {
            return Err(Error::InvalidGrid("t_start is not finite".into()));
        }
        Ok(Self { t_start, dt, n })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.t_start, self.dt, self.n).map(|_| ())
    }

    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        self.t_start + j as f64 * self.dt
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.node(j))
    }

    /// Right end of the half-open window `[t_start, t_start + n·dt)`.
    pub fn t_end(&self) -> f64 {
        self.t_start + self.n as f64 * self.dt
    }

    pub fn frequency_step(&self) -> f64 {
        2.0 * std::f64::consts::PI / (self.n as f64 * self.dt)
    }

    /// Frequency node `t_k` in FFT order; the Nyquist bin is negative.
    #[inline]
    pub fn frequency(&self, k: usize) -> f64 {
        let ks = if k < self.n.div_ceil(2) { k as f64 } else { k as f64 - self.n as f64 };
        // n even: k = n/2 maps to −n/2
        let ks = if self.n % 2 == 0 && k == self.n / 2 { -(self.n as f64) / 2.0 } else { ks };
        ks * self.frequency_step()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.frequency(k)).collect()
    }

    /// Index of the node at `t`, if `t` lies on the grid (to 1e-9·dt).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_start) / self.dt;
        let j = x.round();
        ((x - j).abs() < 1e-9 && j >= 0.0 && (j as usize) < self.n).then_some(j as usize)
    }

    /// True when `t = 0` is strictly inside the window.
    pub fn contains_zero_interior(&self) -> bool {
        self.t_start < 0.0 && self.t_end() > 0.0
    }
}

/// Step function `χ_{[0,∞)}` with the mid-value at the origin.
pub fn heaviside(t: f64, dt: f64) -> f64 {
    if t.abs() <= 1e-9 * dt {
        0.5
    } else if t > 0.0 {
        1.0
    } else {
        0.0
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::InvalidWeight {
            nu,
            reason: "the weight must be positive (anti-causal weights are not supported)".into(),
        });
    }
    Ok(())
}

/// Samples of a `ℂ^d`-valued function on a grid, with weight `ν`.
///
/// `values` is `n × d`: one row per node, one column per component.
#[derive(Clone, Debug)]
pub struct WeightedSignal {
    pub grid: TimeGrid,
    pub nu: f64,
    pub values: DMatrix<C64>,
}

impl WeightedSignal {
    pub fn new(grid: TimeGrid, nu: f64, values: DMatrix<C64>) -> Result<Self> {
        grid.validate()?;
        check_nu(nu)?;
        if values.nrows() != grid.n {
            return Err(Error::DimensionMismatch {
                context: "signal samples",
                expected: grid.n,
                got: values.nrows(),
            });
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("signal samples"));
        }
        Ok(Self { grid, nu, values })
    }

    pub fn zeros(grid: TimeGrid, nu: f64, dim: usize) -> Result<Self> {
        Self::new(grid, nu, DMatrix::zeros(grid.n, dim))
    }

    /// Samples `f(t_j)` at every node.
    pub fn from_fn(grid: TimeGrid, nu: f64, dim: usize, f: impl Fn(f64) -> CVec) -> Result<Self> {
        let mut values = DMatrix::zeros(grid.n, dim);
        for j in 0..grid.n {
            let v = f(grid.node(j));
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "sampled function",
                    expected: dim,
                    got: v.len(),
                });
            }
            values.row_mut(j).copy_from(&v.transpose());
        }
        Self::new(grid, nu, values)
    }

    /// Scalar convenience constructor.
    pub fn from_scalar_fn(grid: TimeGrid, nu: f64, f: impl Fn(f64) -> C64) -> Result<Self> {
        Self::from_fn(grid, nu, 1, |t| CVec::from_element(1, f(t)))
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn value(&self, j: usize) -> CVec {
        self.values.row(j).transpose()
    }

    pub fn component(&self, comp: usize) -> Vec<C64> {
        self.values.column(comp).iter().copied().collect()
    }

    /// Same samples reinterpreted in a different weighted space.
    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        Self::new(self.grid, nu, self.values.clone())
    }

    pub fn scaled(&self, alpha: C64) -> Self {
        Self { values: &self.values * alpha, ..self.clone() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self { values: &self.values + &other.values, ..self.clone() })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self { values: &self.values - &other.values, ..self.clone() })
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::InvalidGrid("signals live on different grids".into()));
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                context: "signal dimension",
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    /// Largest weighted magnitude in the last 10% of the window, relative to
    /// the largest weighted magnitude overall (0 for the zero signal).
    pub fn end_decay(&self) -> f64 {
        let n = self.grid.n;
        let tail_start = n - (n / 10).max(1);
        let mut tail: f64 = 0.0;
        let mut all: f64 = 0.0;
        for j in 0..n {
            let w = (-self.nu * self.grid.node(j)).exp();
            let m = self.values.row(j).iter().map(|z| z.norm()).fold(0.0, f64::max) * w;
            all = all.max(m);
            if j >= tail_start {
                tail = tail.max(m);
            }
        }
        if all == 0.0 {
            0.0
        } else {
            tail / all
        }
    }
}

/// Image of a signal under the discrete Fourier–Laplace transform.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub grid: TimeGrid,
    pub nu: f64,
    pub values: DMatrix<C64>,
}

impl Spectrum {
    pub fn new(grid: TimeGrid, nu: f64, values: DMatrix<C64>) -> Result<Self> {
        grid.validate()?;
        check_nu(nu)?;
        if values.nrows() != grid.n {
            return Err(Error::DimensionMismatch {
                context: "spectrum samples",
                expected: grid.n,
                got: values.nrows(),
            });
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("spectrum samples"));
        }
        Ok(Self { grid, nu, values })
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn frequency(&self, k: usize) -> f64 {
        self.grid.frequency(k)
    }

    /// Spectral variable `i t_k + ν` (the symbol of `∂_{0,ν}`).
    pub fn symbol(&self, k: usize) -> C64 {
        I * self.grid.frequency(k) + self.nu
    }

    pub fn value(&self, k: usize) -> CVec {
        self.values.row(k).transpose()
    }

    /// Multiplies every frequency row by a scalar multiplier `m(k, i t_k + ν)`.
    pub fn map_scalar(&self, m: impl Fn(usize, C64) -> C64) -> Self {
        let mut values = self.values.clone();
        for k in 0..self.grid.n {
            let f = m(k, self.symbol(k));
            for v in values.row_mut(k).iter_mut() {
                *v *= f;
            }
        }
        Self { values, ..self.clone() }
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

/// Discrete `L_ν`: weight by `e^{−νt}`, FFT, and rescale by `dt/√(2π)` with
/// the phase of the window origin.
pub fn fourier_laplace(u: &WeightedSignal) -> Result<Spectrum> {
    check_nu(u.nu)?;
    let g = u.grid;
    let fft = plan(g.n, false);
    let weights: Vec<f64> = g.nodes().map(|t| (-u.nu * t).exp()).collect();
    let mut out = DMatrix::zeros(g.n, u.dim());
    let mut buf = vec![C64::new(0.0, 0.0); g.n];
    for comp in 0..u.dim() {
        for j in 0..g.n {
            buf[j] = u.values[(j, comp)] * weights[j];
        }
        fft.process(&mut buf);
        for k in 0..g.n {
            let phase = (-I * g.frequency(k) * g.t_start).exp();
            out[(k, comp)] = buf[k] * phase * (g.dt / SQRT_2PI);
        }
    }
    Spectrum::new(g, u.nu, out)
}

/// Exact inverse of [`fourier_laplace`].
pub fn inverse_fourier_laplace(s: &Spectrum) -> Result<WeightedSignal> {
    check_nu(s.nu)?;
    let g = s.grid;
    let fft = plan(g.n, true);
    let scale = SQRT_2PI / (g.n as f64 * g.dt);
    let mut out = DMatrix::zeros(g.n, s.dim());
    let mut buf = vec![C64::new(0.0, 0.0); g.n];
    for comp in 0..s.dim() {
        for k in 0..g.n {
            let phase = (I * g.frequency(k) * g.t_start).exp();
            buf[k] = s.values[(k, comp)] * phase;
        }
        fft.process(&mut buf);
        for j in 0..g.n {
            out[(j, comp)] = buf[j] * scale * (s.nu * g.node(j)).exp();
        }
    }
    WeightedSignal::new(g, s.nu, out)
}

/// `∂_{0,ν}^{-1}` as spectral division by `i t_k + ν`.
pub fn apply_d0_inverse(u: &WeightedSignal) -> Result<WeightedSignal> {
    let s = fourier_laplace(u)?;
    inverse_fourier_laplace(&s.map_scalar(|_, z| z.inv()))
}

/// `∂_{0,ν}` as spectral multiplication by `i t_k + ν`.
pub fn apply_d0(u: &WeightedSignal) -> Result<WeightedSignal> {
    let s = fourier_laplace(u)?;
    inverse_fourier_laplace(&s.map_scalar(|_, z| z))
}

/// Running integral `t ↦ ∫_{t_start}^{t} u` by the cumulative trapezoid rule.
pub fn cumulative_integral(u: &WeightedSignal) -> WeightedSignal {
    let g = u.grid;
    let mut out = DMatrix::zeros(g.n, u.dim());
    for comp in 0..u.dim() {
        let mut acc = C64::new(0.0, 0.0);
        for j in 1..g.n {
            acc += (u.values[(j - 1, comp)] + u.values[(j, comp)]) * (0.5 * g.dt);
            out[(j, comp)] = acc;
        }
    }
    WeightedSignal { values: out, ..u.clone() }
}

/// `‖u‖_{H_{ν,0}}` by the trapezoid rule on `|u(t)|² e^{−2νt}`.
pub fn weighted_norm(u: &WeightedSignal) -> f64 {
    weighted_norm_between(u, f64::NEG_INFINITY, f64::INFINITY)
}

/// Weighted norm restricted to nodes with `lo ≤ t < hi`.
pub fn weighted_norm_between(u: &WeightedSignal, lo: f64, hi: f64) -> f64 {
    weighted_norm_in(u, u.nu, lo, hi)
}

/// Weighted norm with an explicit weight, restricted to `lo ≤ t < hi`.
pub fn weighted_norm_in(u: &WeightedSignal, nu: f64, lo: f64, hi: f64) -> f64 {
    let g = u.grid;
    let mut acc = 0.0;
    for j in 0..g.n {
        let t = g.node(j);
        if t < lo || t >= hi {
            continue;
        }
        let w = if j == 0 || j == g.n - 1 { 0.5 } else { 1.0 };
        let m2: f64 = u.values.row(j).iter().map(|z| z.norm_sqr()).sum();
        acc += w * m2 * (-2.0 * nu * t).exp();
    }
    (acc * g.dt).sqrt()
}

/// `L₂` norm of a spectrum, `(Δω Σ_k |û_k|²)^{1/2}`.
pub fn spectrum_norm(s: &Spectrum) -> f64 {
    let sum: f64 = s.values.iter().map(|z| z.norm_sqr()).sum();
    (sum * s.grid.frequency_step()).sqrt()
}

/// Writes `t,re_0,im_0,...` with 17 significant digits.
pub fn write_csv<W: Write>(u: &WeightedSignal, mut w: W) -> Result<()> {
    let mut header = String::from("t");
    for i in 0..u.dim() {
        header.push_str(&format!(",re_{i},im_{i}"));
    }
    writeln!(w, "{header}")?;
    for j in 0..u.grid.n {
        let mut line = format!("{:.16e}", u.grid.node(j));
        for z in u.values.row(j).iter() {
            line.push_str(&format!(",{:.16e},{:.16e}", z.re, z.im));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reads a signal written by [`write_csv`]; the grid is recovered from the
/// `t` column, which must be uniform.
pub fn read_csv<R: Read>(r: R, nu: f64) -> Result<WeightedSignal> {
    let mut rdr = csv::Reader::from_reader(r);
    let ncols = rdr.headers()?.len();
    if ncols < 3 || (ncols - 1) % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "signal CSV needs t plus re/im column pairs, got {ncols} columns"
        )));
    }
    let dim = (ncols - 1) / 2;
    let mut ts = Vec::new();
    let mut rows: Vec<C64> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidInput(format!("bad number in column {i}")))
        };
        ts.push(parse(0)?);
        for i in 0..dim {
            rows.push(C64::new(parse(1 + 2 * i)?, parse(2 + 2 * i)?));
        }
    }
    if ts.len() < 2 {
        return Err(Error::InvalidGrid("signal CSV needs at least two rows".into()));
    }
    let dt = (ts[ts.len() - 1] - ts[0]) / (ts.len() - 1) as f64;
    for (j, t) in ts.iter().enumerate() {
        if (t - (ts[0] + j as f64 * dt)).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::InvalidGrid("signal CSV time column is not uniform".into()));
        }
    }
    let grid = TimeGrid::new(ts[0], dt, ts.len())?;
    WeightedSignal::new(grid, nu, DMatrix::from_row_slice(ts.len(), dim, &rows))
}

pub fn sqrt_2pi() -> f64 {
    SQRT_2PI
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c as unit;

    fn grid() -> TimeGrid {
        TimeGrid::new(-10.0, 0.01, 4096).unwrap()
    }

    fn causal_exp() -> WeightedSignal {
        let g = grid();
        WeightedSignal::from_scalar_fn(g, 1.0, |t| unit(heaviside(t, g.dt) * (-t).exp())).unwrap()
    }

    #[test]
    fn transform_of_causal_exponential_matches_closed_form() {
        let s = fourier_laplace(&causal_exp()).unwrap();
        for k in [0usize, 1, 5, 40, 200, 4000] {
            let t = s.frequency(k);
            let exact = C64::new(2.0, t).inv() / SQRT_2PI;
            // trapezoid error grows like dt²·t²
            let tol = 1e-4 * (1.0 + t * t) * exact.norm();
            assert!((s.values[(k, 0)] - exact).norm() < tol.max(2e-5), "k={k} t={t}");
        }
    }

    #[test]
    fn zero_signal_has_zero_spectrum() {
        let u = WeightedSignal::zeros(grid(), 1.0, 2).unwrap();
        let s = fourier_laplace(&u).unwrap();
        assert!(s.values.iter().all(|z| z.norm() == 0.0));
        let back = inverse_fourier_laplace(&s).unwrap();
        assert!(back.values.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn weighted_norm_of_causal_exponential() {
        // √(∫₀^∞ e^{−4t} dt) = 1/2; squaring the mid-value costs O(dt)
        let err = (weighted_norm(&causal_exp()) - 0.5).abs();
        assert!(err < 0.5 * grid().dt, "err = {err}");
        let g = grid();
        let smooth = WeightedSignal::from_scalar_fn(g, 1.0, |t| unit((-(t - 5.0).powi(2)).exp())).unwrap();
        // ∫ e^{−2(t−5)²} e^{−2t} dt = √(π/2) e^{−9.5}
        let exact = ((std::f64::consts::PI / 2.0).sqrt() * (-9.5f64).exp()).sqrt();
        assert!((weighted_norm(&smooth) - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn weighted_norm_is_homogeneous() {
        let u = causal_exp();
        let scaled = u.scaled(C64::new(3.0, -4.0));
        assert!((weighted_norm(&scaled) - 5.0 * weighted_norm(&u)).abs() < 1e-14);
    }

    #[test]
    fn flat_spectrum_is_a_discrete_delta_at_the_origin() {
        let g = grid();
        let cst = C64::new(2.0, -1.0);
        let s = Spectrum::new(g, 1.0, DMatrix::from_element(g.n, 1, cst / SQRT_2PI)).unwrap();
        let u = inverse_fourier_laplace(&s).unwrap();
        let zero = g.index_of(0.0).unwrap();
        // mass = dt · value at the origin
        assert!((u.values[(zero, 0)] * g.dt - cst).norm() < 1e-10);
        for j in (0..g.n).filter(|&j| j != zero) {
            assert!(u.values[(j, 0)].norm() * (-g.node(j)).exp() < 1e-9);
        }
    }

    #[test]
    fn antiderivative_of_indicator_is_a_ramp() {
        let g = TimeGrid::new(-4.0, 1.0 / 256.0, 4096).unwrap();
        let u = WeightedSignal::from_scalar_fn(g, 1.0, |t| {
            unit(heaviside(t, g.dt) - heaviside(t - 1.0, g.dt))
        })
        .unwrap();
        let exact = WeightedSignal::from_scalar_fn(g, 1.0, |t| unit(t.clamp(0.0, 1.0))).unwrap();
        let cum = cumulative_integral(&u);
        // exact except on the two jump nodes, which carry a quarter step
        for j in 0..g.n {
            let t = g.node(j);
            if t.abs() > 0.5 * g.dt && (t - 1.0).abs() > 0.5 * g.dt {
                assert!((cum.values[(j, 0)] - exact.values[(j, 0)]).norm() < 1e-12, "t = {t}");
            }
        }
        // the spectral route sees the two jumps as Gibbs ripples
        let spec = apply_d0_inverse(&u).unwrap();
        let rel = weighted_norm(&spec.sub(&exact).unwrap()) / weighted_norm(&exact);
        assert!(rel < 1e-3, "rel = {rel}");
    }

    #[test]
    fn derivative_of_ramped_sine_is_cosine() {
        let g = TimeGrid::new(-5.0, 0.01, 8192).unwrap();
        let ramp = |t: f64| {
            if t <= 0.0 {
                0.0
            } else if t >= 2.0 {
                1.0
            } else {
                let x = t / 2.0;
                let a = (-1.0 / x).exp();
                let b = (-1.0 / (1.0 - x)).exp();
                a / (a + b)
            }
        };
        let u = WeightedSignal::from_scalar_fn(g, 1.0, |t| unit(ramp(t) * t.sin())).unwrap();
        let du = apply_d0(&u).unwrap();
        for j in 0..g.n {
            let t = g.node(j);
            if (3.0..8.0).contains(&t) {
                assert!((du.values[(j, 0)].re - t.cos()).abs() < 1e-8, "t = {t}");
            }
        }
        // finite differences agree on the ramp as well
        for j in 600..800 {
            let fd = (u.values[(j + 1, 0)] - u.values[(j - 1, 0)]) / (2.0 * g.dt);
            assert!((du.values[(j, 0)] - fd).norm() < 1e-3);
        }
    }

    #[test]
    fn derivative_of_weight_profile_is_nu_times_signal() {
        let nu = 0.7;
        let g = TimeGrid::new(-5.0, 0.01, 4096).unwrap();
        let plateau = |t: f64| (-(((t - 10.0) / 5.0).powi(16))).exp();
        let u = WeightedSignal::from_scalar_fn(g, nu, |t| unit((nu * t).exp() * plateau(t))).unwrap();
        let du = apply_d0(&u).unwrap();
        for j in 0..g.n {
            let t = g.node(j);
            if (9.0..11.0).contains(&t) {
                let v = u.values[(j, 0)];
                assert!((du.values[(j, 0)] - v * nu).norm() < 1e-6 * v.norm(), "t = {t}");
            }
        }
    }

    #[test]
    fn rejects_bad_weights_and_grids() {
        assert!(TimeGrid::new(0.0, 0.0, 16).is_err());
        assert!(TimeGrid::new(0.0, 0.1, 1).is_err());
        let g = grid();
        assert!(WeightedSignal::zeros(g, 0.0, 1).is_err());
        assert!(WeightedSignal::zeros(g, -1.0, 1).is_err());
        let mut bad = DMatrix::zeros(g.n, 1);
        bad[(3, 0)] = C64::new(f64::NAN, 0.0);
        assert!(WeightedSignal::new(g, 1.0, bad).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let u = causal_exp();
        let mut buf = Vec::new();
        write_csv(&u, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,re_0,im_0\n"));
        let back = read_csv(&buf[..], 1.0).unwrap();
        assert_eq!(back.grid.n, u.grid.n);
        assert!((back.grid.dt - u.grid.dt).abs() < 1e-15);
        assert!(weighted_norm(&back.sub(&u).unwrap()) == 0.0);
    }
}
