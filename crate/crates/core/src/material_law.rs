//! Material laws `M(z) = M₀(z) + z·M₁(z)` built from memory kernels, with
//! block-diagonal `M₀`, `M₁` acting on `H₀ ⊕ H₁`, and certificates for the
//! solvability condition `Re z^{−1}M(z) ≥ c > 0`.
//!
//! Points are addressed by `z^{−1} = it + ν`, so that kernel symbols are
//! read at `B̂(−iz^{−1}) = B̂(t − iν)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel_lab::{ac_lower_bound, check_hypotheses, neumann_threshold, Kernel, SampleSpec};
use crate::linalg::{c, hermitian_part, inverse, lambda_min, op_norm, CMat, C64, I};

/// Affine map `x ↦ constant + slope·x`, applied to the normalized kernel
/// symbol `√(2π)K̂`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub constant: C64,
    pub slope: C64,
}

impl Affine {
    pub const ONE: Affine = Affine { constant: C64::new(1.0, 0.0), slope: C64::new(0.0, 0.0) };
    pub const ZERO: Affine = Affine { constant: C64::new(0.0, 0.0), slope: C64::new(0.0, 0.0) };

    pub fn new(constant: f64, slope: f64) -> Self {
        Self { constant: c(constant), slope: c(slope) }
    }

    fn apply(&self, x: &CMat) -> CMat {
        let n = x.nrows();
        CMat::identity(n, n) * self.constant + x * self.slope
    }
}

/// One diagonal entry `Q(Ĉ)^{−1}P(B̂)` of the general law. Missing kernels
/// count as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineBlock {
    pub p: Affine,
    pub q: Affine,
    pub b: Option<Kernel>,
    pub c: Option<Kernel>,
}

impl AffineBlock {
    pub fn zero() -> Self {
        Self { p: Affine::ZERO, q: Affine::ONE, b: None, c: None }
    }

    pub fn identity() -> Self {
        Self { p: Affine::ONE, q: Affine::ONE, b: None, c: None }
    }

    fn kernels(&self) -> impl Iterator<Item = &Kernel> {
        self.b.iter().chain(self.c.iter())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LawKind {
    /// `diag(1 + √(2π)Ĉ, (1 − √(2π)B̂)^{−1})`, `C` on `H₀`, `B` on `H₁`.
    Hyperbolic { b: Kernel, c: Kernel },
    /// `diag(1 + √(2π)Ĉ, 0) + z·diag(0, (1 − √(2π)B̂)^{−1})`.
    Parabolic { b: Kernel, c: Kernel },
    /// `diag(1, 0) + z·diag(0, (1 − √(2π)B̂)^{−1}(1 + √(2π)Ĉ))`, both on `H₀`.
    Vlasov { b: Kernel, c: Kernel },
    /// Blocks in the order (M₀ on H₀, M₀ on H₁, M₁ on H₀, M₁ on H₁).
    CustomAffine { blocks: Box<[AffineBlock; 4]> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialLaw {
    pub kind: LawKind,
    pub dims: (usize, usize),
    /// Smallest weight at which every Neumann inversion in the law converges
    /// (through `|K|_{L_{1,ν}}` bounds).
    pub nu_min: f64,
}

/// `M₀` and `M₁` at one point, so that `M = M₀ + z·M₁` and
/// `z^{−1}M = z^{−1}M₀ + M₁`.
#[derive(Clone, Debug)]
pub struct LawSample {
    pub m0: CMat,
    pub m1: CMat,
}

const NEUMANN_TARGET: f64 = 1.0 - 1e-9;

fn check_dim(k: &Kernel, want: usize, what: &'static str) -> Result<()> {
    if k.dim != want {
        return Err(Error::DimensionMismatch { context: what, expected: want, got: k.dim });
    }
    Ok(())
}

impl MaterialLaw {
    pub fn hyperbolic(b: Kernel, c: Kernel) -> Result<Self> {
        let dims = (c.dim, b.dim);
        let nu_min = neumann_threshold(&b, NEUMANN_TARGET)?.max(c.mu);
        Ok(Self { kind: LawKind::Hyperbolic { b, c }, dims, nu_min })
    }

    pub fn parabolic(b: Kernel, c: Kernel) -> Result<Self> {
        let dims = (c.dim, b.dim);
        let nu_min = neumann_threshold(&b, NEUMANN_TARGET)?.max(c.mu);
        Ok(Self { kind: LawKind::Parabolic { b, c }, dims, nu_min })
    }

    pub fn vlasov(b: Kernel, c: Kernel) -> Result<Self> {
        check_dim(&c, b.dim, "Vlasov kernels")?;
        let dims = (b.dim, b.dim);
        let nu_min = neumann_threshold(&b, NEUMANN_TARGET)?.max(c.mu);
        Ok(Self { kind: LawKind::Vlasov { b, c }, dims, nu_min })
    }

    pub fn custom_affine(d0: usize, d1: usize, blocks: [AffineBlock; 4]) -> Result<Self> {
        let mut nu_min: f64 = 0.0;
        for (i, blk) in blocks.iter().enumerate() {
            let d = if i % 2 == 0 { d0 } else { d1 };
            for k in blk.kernels() {
                check_dim(k, d, "affine block kernel")?;
                nu_min = nu_min.max(k.mu);
            }
            if let Some(ck) = &blk.c {
                if blk.q.slope.norm() > 0.0 {
                    if blk.q.constant.norm() == 0.0 {
                        return Err(Error::InvalidInput(format!(
                            "block {}: Q has no constant part, so Q(Ĉ) is not invertible for large weights",
                            i + 1
                        )));
                    }
                    let target = (blk.q.constant.norm() / blk.q.slope.norm()).min(NEUMANN_TARGET);
                    nu_min = nu_min.max(neumann_threshold(ck, target)?);
                }
            } else if blk.q.constant.norm() == 0.0 {
                return Err(Error::InvalidInput(format!("block {}: Q is zero", i + 1)));
            }
        }
        Ok(Self { kind: LawKind::CustomAffine { blocks: Box::new(blocks) }, dims: (d0, d1), nu_min })
    }

    pub fn dim(&self) -> usize {
        self.dims.0 + self.dims.1
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            LawKind::Hyperbolic { .. } => "hyperbolic",
            LawKind::Parabolic { .. } => "parabolic",
            LawKind::Vlasov { .. } => "vlasov",
            LawKind::CustomAffine { .. } => "custom_affine",
        }
    }

    fn kernels(&self) -> Vec<&Kernel> {
        match &self.kind {
            LawKind::Hyperbolic { b, c } | LawKind::Parabolic { b, c } | LawKind::Vlasov { b, c } => {
                vec![b, c]
            }
            LawKind::CustomAffine { blocks } => blocks.iter().flat_map(|b| b.kernels()).collect(),
        }
    }

    fn check_nu(&self, nu: f64) -> Result<()> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::InvalidWeight { nu, reason: "the weight must be positive".into() });
        }
        if let Some(k) = self.kernels().into_iter().find(|k| nu < k.mu) {
            return Err(Error::InvalidWeight {
                nu,
                reason: format!("below a kernel growth bound mu = {}", k.mu),
            });
        }
        Ok(())
    }

    /// `(1 − √(2π)B̂)^{−1}` with the admissibility check.
    fn resolvent(b: &Kernel, t: f64, nu: f64, block: &'static str) -> Result<CMat> {
        let sym = b.symbol(t, nu)?;
        let norm = op_norm(&sym);
        if norm >= 1.0 {
            return Err(Error::InadmissibleWeight { nu, block, norm, freq: t });
        }
        let d = b.dim;
        inverse(&(CMat::identity(d, d) - sym), block)
    }

    /// `M₀` and `M₁` at `z^{−1} = it + ν`.
    pub fn sample(&self, t: f64, nu: f64) -> Result<LawSample> {
        self.check_nu(nu)?;
        let (d0, d1) = self.dims;
        let n = d0 + d1;
        let mut m0 = CMat::zeros(n, n);
        let mut m1 = CMat::zeros(n, n);
        let id = |d: usize| CMat::identity(d, d);
        match &self.kind {
            LawKind::Hyperbolic { b, c: ck } => {
                m0.view_mut((0, 0), (d0, d0)).copy_from(&(id(d0) + ck.symbol(t, nu)?));
                m0.view_mut((d0, d0), (d1, d1))
                    .copy_from(&Self::resolvent(b, t, nu, "block 1: (1 - sqrt(2pi) B^)^-1")?);
            }
            LawKind::Parabolic { b, c: ck } => {
                m0.view_mut((0, 0), (d0, d0)).copy_from(&(id(d0) + ck.symbol(t, nu)?));
                m1.view_mut((d0, d0), (d1, d1))
                    .copy_from(&Self::resolvent(b, t, nu, "block 1: (1 - sqrt(2pi) B^)^-1")?);
            }
            LawKind::Vlasov { b, c: ck } => {
                m0.view_mut((0, 0), (d0, d0)).copy_from(&id(d0));
                let r = Self::resolvent(b, t, nu, "block 1: (1 - sqrt(2pi) B^)^-1")?;
                m1.view_mut((d0, d0), (d1, d1)).copy_from(&(r * (id(d1) + ck.symbol(t, nu)?)));
            }
            LawKind::CustomAffine { blocks } => {
                const NAMES: [&str; 4] = [
                    "M0 block on H0: Q1(C1^)",
                    "M0 block on H1: Q2(C2^)",
                    "M1 block on H0: Q3(C3^)",
                    "M1 block on H1: Q4(C4^)",
                ];
                for (i, blk) in blocks.iter().enumerate() {
                    let (d, off) = if i % 2 == 0 { (d0, 0) } else { (d1, d0) };
                    let sym = |k: &Option<Kernel>| -> Result<CMat> {
                        match k {
                            Some(k) => k.symbol(t, nu),
                            None => Ok(CMat::zeros(d, d)),
                        }
                    };
                    let q = blk.q.apply(&sym(&blk.c)?);
                    let p = blk.p.apply(&sym(&blk.b)?);
                    let block = inverse(&q, NAMES[i])? * p;
                    let target = if i < 2 { &mut m0 } else { &mut m1 };
                    target.view_mut((off, off), (d, d)).copy_from(&block);
                }
            }
        }
        Ok(LawSample { m0, m1 })
    }

    /// `M(z)` at `z^{−1} = it + ν`.
    pub fn evaluate(&self, t: f64, nu: f64) -> Result<CMat> {
        let s = self.sample(t, nu)?;
        let z = (I * t + nu).inv();
        Ok(s.m0 + s.m1 * z)
    }

    /// `z^{−1}M(z) = z^{−1}M₀ + M₁`, the matrix whose Hermitian part the
    /// certificate bounds.
    pub fn scaled(&self, t: f64, nu: f64) -> Result<CMat> {
        let s = self.sample(t, nu)?;
        Ok(s.m0 * (I * t + nu) + s.m1)
    }
}

/// `ν₀(1 − β)/(1 + β)²` with `β = |B|_{L_{1,ν₀}}`, for kernels satisfying all
/// three hypotheses at `ν₀`.
pub fn lemma_posb_bound(b: &Kernel, nu0: f64) -> Result<f64> {
    let beta = b.l1nu_norm(nu0)?;
    if beta >= 1.0 {
        return Err(Error::NormTooLarge { nu: nu0, norm: beta });
    }
    let rep = check_hypotheses(b, nu0, &SampleSpec::default())?;
    if !rep.all_ok() {
        return Err(Error::HypothesesFailed(format!(
            "kernel fails the hypotheses at nu0 = {nu0}: selfadjoint {}, commuting {}, sign {}",
            rep.selfadjoint_ok, rep.commute_ok, rep.sign_ok
        )));
    }
    Ok(nu0 * (1.0 - beta) / ((1.0 + beta) * (1.0 + beta)))
}

/// `ν₀(1 − |C|_{L_{1,ν₀}})` for kernels satisfying selfadjointness and the
/// sign condition at `ν₀`.
pub fn theorem_c_bound(ck: &Kernel, nu0: f64) -> Result<f64> {
    let norm = ck.l1nu_norm(nu0)?;
    if norm >= 1.0 {
        return Err(Error::NormTooLarge { nu: nu0, norm });
    }
    let rep = check_hypotheses(ck, nu0, &SampleSpec::default())?;
    if !(rep.selfadjoint_ok && rep.sign_ok) {
        return Err(Error::HypothesesFailed(format!(
            "kernel fails selfadjointness or the sign condition at nu0 = {nu0}"
        )));
    }
    Ok(nu0 * (1.0 - norm))
}

/// `Re z^{−1}(1 + √(2π)Ĉ) ≥ ν − ‖C(0)‖ − |C'|_{L_{1,ν}}`, from
/// `z^{−1}√(2π)Ĉ = C(0) + √(2π)(C')^(−iz^{−1})` (integration by parts).
pub fn ac_c_bound(ck: &Kernel, nu: f64) -> Result<f64> {
    let g = ck.derivative_kernel()?.l1nu_norm(nu)?;
    Ok(nu - op_norm(&ck.value_at(0.0)) - g)
}

/// Best available lower bound for `Re z^{−1}(1 + √(2π)Ĉ)`.
fn c_block_bound(ck: &Kernel, nu: f64) -> Option<(f64, &'static str)> {
    if ck.is_zero() {
        return Some((nu, "exact"));
    }
    let hyp = theorem_c_bound(ck, nu).ok().map(|v| (v, "hypotheses"));
    let ac = ac_c_bound(ck, nu).ok().map(|v| (v, "absolute continuity"));
    best(hyp, ac)
}

/// Best available lower bound for `Re z^{−1}(1 − √(2π)B̂)^{−1}`.
fn b_block_bound(b: &Kernel, nu: f64) -> Option<(f64, &'static str)> {
    if b.is_zero() {
        return Some((nu, "exact"));
    }
    let hyp = lemma_posb_bound(b, nu).ok().map(|v| (v, "hypotheses"));
    let ac = ac_lower_bound(b, nu).ok().map(|v| (v, "absolute continuity"));
    best(hyp, ac)
}

fn best(
    a: Option<(f64, &'static str)>,
    b: Option<(f64, &'static str)>,
) -> Option<(f64, &'static str)> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.0 > x.0 { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub law: String,
    pub nu_used: f64,
    pub nu_min: f64,
    pub c_analytic: Option<f64>,
    pub analytic_route: Option<String>,
    pub c_observed: f64,
    /// Smallest Hermitian-part eigenvalue of each diagonal block.
    pub block_minima: [f64; 2],
    /// `(t, ν')` where `c_observed` is attained.
    pub worst_point: (f64, f64),
    pub nu_samples: Vec<f64>,
    pub sample_spec: SampleSpec,
    pub tolerance: f64,
    /// `c_observed ≥ c_analytic − tolerance` (true when no analytic bound).
    pub dominance_ok: bool,
    pub passed: bool,
}

/// Samples `λ_min(Re z^{−1}M(z))` over `z^{−1} = it + ν'`, `t` in the
/// symmetric log grid of `spec` and `ν' ∈ {1,2,4,8}·ν`.
pub fn certify(law: &MaterialLaw, nu: f64, spec: &SampleSpec) -> Result<Certificate> {
    certify_with(law, nu, &[1.0, 2.0, 4.0, 8.0], spec)
}

pub fn certify_with(
    law: &MaterialLaw,
    nu: f64,
    nu_factors: &[f64],
    spec: &SampleSpec,
) -> Result<Certificate> {
    spec.validate()?;
    if !(nu >= law.nu_min) || !(nu > 0.0) {
        return Err(Error::InvalidWeight {
            nu,
            reason: format!("below the law's smallest admissible weight {}", law.nu_min),
        });
    }
    if nu_factors.iter().any(|&f| !(f >= 1.0)) {
        return Err(Error::InvalidInput("weight factors must be ≥ 1".into()));
    }
    let ts = spec.symmetric_frequencies();
    let nus: Vec<f64> = nu_factors.iter().map(|f| f * nu).collect();
    let points: Vec<(f64, f64)> =
        nus.iter().flat_map(|&nv| ts.iter().map(move |&t| (t, nv))).collect();
    let (d0, d1) = law.dims;
    let samples: Vec<Result<(f64, f64)>> = points
        .par_iter()
        .map(|&(t, nv)| {
            let w = hermitian_part(&law.scaled(t, nv)?);
            let b0 = if d0 > 0 { lambda_min(&w.view((0, 0), (d0, d0)).into_owned()) } else { f64::INFINITY };
            let b1 = if d1 > 0 { lambda_min(&w.view((d0, d0), (d1, d1)).into_owned()) } else { f64::INFINITY };
            Ok((b0, b1))
        })
        .collect();
    let mut block_minima = [f64::INFINITY; 2];
    let mut c_observed = f64::INFINITY;
    let mut worst_point = (0.0, nu);
    for (s, &p) in samples.into_iter().zip(&points) {
        let (b0, b1) = s?;
        block_minima[0] = block_minima[0].min(b0);
        block_minima[1] = block_minima[1].min(b1);
        if b0.min(b1) < c_observed {
            c_observed = b0.min(b1);
            worst_point = p;
        }
    }
    let analytic = match &law.kind {
        LawKind::Hyperbolic { b, c: ck } => match (c_block_bound(ck, nu), b_block_bound(b, nu)) {
            (Some(x), Some(y)) => Some((x.0.min(y.0), format!("C block: {}, B block: {}", x.1, y.1))),
            _ => None,
        },
        LawKind::Parabolic { b, c: ck } => {
            let q = b.l1nu_norm(nu)?;
            let b1 = (q < 1.0).then(|| 1.0 - q / (1.0 - q));
            match (c_block_bound(ck, nu), b1) {
                (Some(x), Some(y)) => {
                    Some((x.0.min(y), format!("C block: {}, B block: Neumann series", x.1)))
                }
                _ => None,
            }
        }
        LawKind::Vlasov { .. } | LawKind::CustomAffine { .. } => None,
    };
    let tolerance = 1e-9;
    let dominance_ok = analytic.as_ref().is_none_or(|(ca, _)| c_observed >= ca - tolerance);
    Ok(Certificate {
        law: law.kind_name().to_string(),
        nu_used: nu,
        nu_min: law.nu_min,
        c_analytic: analytic.as_ref().map(|a| a.0),
        analytic_route: analytic.map(|a| a.1),
        c_observed,
        block_minima,
        worst_point,
        nu_samples: nus,
        sample_spec: spec.clone(),
        tolerance,
        dominance_ok,
        passed: c_observed > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel_lab::ExpTerm;
    use crate::linalg::{asymmetry, is_diagonal, max_abs, real_matrix};
    use proptest::prelude::*;

    fn hyper_half() -> MaterialLaw {
        MaterialLaw::hyperbolic(Kernel::scalar_exp(0.5, 1.0), Kernel::zero(1)).unwrap()
    }

    #[test]
    fn elastic_law_is_the_identity() {
        let law = MaterialLaw::hyperbolic(Kernel::zero(2), Kernel::zero(3)).unwrap();
        for (t, nu) in [(0.0, 1.0), (-3.0, 0.5), (1e3, 8.0)] {
            let m = law.evaluate(t, nu).unwrap();
            assert!(max_abs(&(m - CMat::identity(5, 5))) == 0.0);
        }
        let cert = certify(&law, 1.0, &SampleSpec::default()).unwrap();
        assert!((cert.c_observed - 1.0).abs() < 1e-12);
        assert_eq!(cert.c_analytic, Some(1.0));
        let cert = certify_with(&law, 1.0, &[1.0, 2.0, 5.0], &SampleSpec::default()).unwrap();
        assert!((cert.c_observed - 1.0).abs() < 1e-12 && cert.passed);
    }

    #[test]
    fn hyperbolic_block_value() {
        let m = hyper_half().evaluate(0.0, 1.0).unwrap();
        assert!((m[(1, 1)] - c(4.0 / 3.0)).norm() < 1e-14);
        assert!((m[(0, 0)] - c(1.0)).norm() == 0.0);
    }

    #[test]
    fn large_kernel_is_inadmissible_at_small_weight() {
        let ok = MaterialLaw::hyperbolic(Kernel::scalar_exp(0.5, 1.0), Kernel::zero(1)).unwrap();
        assert!(ok.evaluate(0.0, 0.01).is_ok());
        let law = MaterialLaw::hyperbolic(Kernel::scalar_exp(3.0, 1.0), Kernel::zero(1)).unwrap();
        match law.evaluate(0.0, 0.01) {
            Err(Error::InadmissibleWeight { block, norm, .. }) => {
                assert!(block.contains("block 1"));
                assert!((norm - 3.0 / 1.01).abs() < 1e-12);
            }
            other => panic!("expected inadmissible weight, got {other:?}"),
        }
        // closed form: 3/(1+ν) < 1 ⟺ ν > 2
        assert!((law.nu_min - 2.0).abs() < 1e-6);
        assert!(law.evaluate(0.0, 2.5).is_ok());
    }

    #[test]
    fn posb_and_c_bounds() {
        let half = Kernel::scalar_exp(0.5, 1.0);
        assert!((lemma_posb_bound(&half, 1.0).unwrap() - 0.48).abs() < 1e-15);
        assert_eq!(lemma_posb_bound(&Kernel::zero(1), 1.0).unwrap(), 1.0);
        let one = Kernel::scalar_exp(1.0, 1.0);
        assert!((lemma_posb_bound(&one, 1.0).unwrap() - 2.0 / 9.0).abs() < 1e-15);
        assert!(lemma_posb_bound(&Kernel::scalar_exp(3.0, 1.0), 1.0).is_err());
        let nil = Kernel::matrix_exp(real_matrix(2, 2, &[0.0, 0.1, 0.0, 0.0]), 1.0).unwrap();
        assert!(matches!(lemma_posb_bound(&nil, 1.0), Err(Error::HypothesesFailed(_))));

        assert_eq!(theorem_c_bound(&Kernel::zero(1), 2.0).unwrap(), 2.0);
        assert!((theorem_c_bound(&half, 1.0).unwrap() - 0.75).abs() < 1e-15);
        assert!((theorem_c_bound(&one, 3.0).unwrap() - 2.25).abs() < 1e-15);
        assert!(theorem_c_bound(&Kernel::scalar_exp(3.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn hyperbolic_certificate_dominates_the_lemma() {
        let cert = certify(&hyper_half(), 1.0, &SampleSpec::default()).unwrap();
        let ca = cert.c_analytic.unwrap();
        assert!((ca - 0.48).abs() < 1e-12, "{cert:?}");
        assert!(cert.c_observed >= 0.48 - 1e-9 && cert.dominance_ok && cert.passed);
        // oracle: dense scalar scan of Re (it+ν)/(1 − ½/(1+ν+it))
        let mut dense = f64::INFINITY;
        for nu in [1.0, 2.0, 4.0, 8.0] {
            for i in -20000..=20000 {
                let t = i as f64 * 0.05;
                let zi = C64::new(nu, t);
                dense = dense.min((zi / (1.0 - 0.5 / (zi + 1.0))).re);
            }
        }
        assert!((cert.block_minima[1] - dense).abs() < 1e-3, "{} vs {dense}", cert.block_minima[1]);
        assert_eq!(cert.block_minima[0], 1.0);
    }

    #[test]
    fn parabolic_block_one_dominates_neumann_bound() {
        // √(2π)‖B̂‖ = 0.4/|2+it| ≤ 0.2 on Re z^{−1} ≥ 1
        let law = MaterialLaw::parabolic(Kernel::scalar_exp(0.4, 1.0), Kernel::zero(1)).unwrap();
        let cert = certify(&law, 1.0, &SampleSpec::default()).unwrap();
        assert!(cert.block_minima[1] >= 0.75, "{cert:?}");
        assert!((cert.c_analytic.unwrap() - 0.75).abs() < 1e-12);
        // parabolic M carries z on block 1: z^{−1}M has no z there
        let s = law.sample(3.0, 1.0).unwrap();
        assert_eq!(s.m0[(1, 1)], c(0.0));
        let m = law.evaluate(3.0, 1.0).unwrap();
        let z = C64::new(1.0, 3.0).inv();
        assert!((m[(1, 1)] - s.m1[(1, 1)] * z).norm() < 1e-15);
    }

    #[test]
    fn vlasov_law_structure() {
        let law = MaterialLaw::vlasov(Kernel::scalar_exp(0.3, 1.0), Kernel::scalar_exp(0.2, 2.0)).unwrap();
        let s = law.sample(0.0, 1.0).unwrap();
        assert_eq!(s.m0[(0, 0)], c(1.0));
        // (1 − 0.3/2)^{−1}(1 + 0.2/3)
        let want = (1.0 + 0.2 / 3.0) / (1.0 - 0.15);
        assert!((s.m1[(1, 1)] - c(want)).norm() < 1e-14);
        let cert = certify(&law, 1.0, &SampleSpec::default()).unwrap();
        assert!(cert.c_analytic.is_none() && cert.passed);
    }

    #[test]
    fn custom_affine_reproduces_hyperbolic() {
        let b = Kernel::scalar_exp(0.5, 1.0);
        let ck = Kernel::scalar_exp(0.2, 3.0);
        let hyper = MaterialLaw::hyperbolic(b.clone(), ck.clone()).unwrap();
        let custom = MaterialLaw::custom_affine(
            1,
            1,
            [
                AffineBlock { p: Affine::new(1.0, 1.0), q: Affine::ONE, b: Some(ck), c: None },
                AffineBlock { p: Affine::ONE, q: Affine::new(1.0, -1.0), b: None, c: Some(b) },
                AffineBlock::zero(),
                AffineBlock::zero(),
            ],
        )
        .unwrap();
        for (t, nu) in [(0.0, 1.0), (2.5, 1.5), (-40.0, 3.0)] {
            let a = hyper.evaluate(t, nu).unwrap();
            let b = custom.evaluate(t, nu).unwrap();
            assert!(max_abs(&(a - b)) < 1e-14);
        }
        assert!((hyper.nu_min - custom.nu_min).abs() < 1e-9);
    }

    #[test]
    fn custom_affine_rejects_singular_q() {
        let r = MaterialLaw::custom_affine(
            1,
            1,
            [
                AffineBlock { p: Affine::ONE, q: Affine::ZERO, b: None, c: None },
                AffineBlock::identity(),
                AffineBlock::zero(),
                AffineBlock::zero(),
            ],
        );
        assert!(r.is_err());
    }

    #[test]
    fn certify_refuses_weights_below_nu_min() {
        let law = MaterialLaw::hyperbolic(Kernel::scalar_exp(3.0, 1.0), Kernel::zero(1)).unwrap();
        assert!(certify(&law, 1.0, &SampleSpec::default()).is_err());
        assert!(certify(&law, 3.0, &SampleSpec::default()).unwrap().passed);
    }

    #[test]
    fn matrix_law_blocks() {
        let k = real_matrix(2, 2, &[0.3, 0.1, 0.1, 0.2]);
        let b = Kernel::exp_sum(
            2,
            vec![ExpTerm { coeff: k.clone(), rate: 1.0 }, ExpTerm { coeff: k * c(0.5), rate: 4.0 }],
        )
        .unwrap();
        let law = MaterialLaw::hyperbolic(b, Kernel::zero(1)).unwrap();
        let m = law.evaluate(1.0, 1.0).unwrap();
        assert!(m[(0, 1)] == c(0.0) && m[(1, 0)] == c(0.0) && m[(0, 2)] == c(0.0));
        let cert = certify(&law, 1.0, &SampleSpec::default()).unwrap();
        assert!(cert.dominance_ok && cert.passed, "{cert:?}");
    }

    proptest! {
        #[test]
        fn hermitian_part_is_exactly_hermitian_and_blocks_diagonal(
            kb in 0.0f64..0.45, kc in 0.0f64..0.45, a in 0.2f64..4.0,
            t in -100.0f64..100.0, nu in 1.0f64..10.0,
        ) {
            let laws = [
                MaterialLaw::hyperbolic(Kernel::scalar_exp(kb, a), Kernel::scalar_exp(kc, a)).unwrap(),
                MaterialLaw::parabolic(Kernel::scalar_exp(kb, a), Kernel::scalar_exp(kc, a)).unwrap(),
                MaterialLaw::vlasov(Kernel::scalar_exp(kb, a), Kernel::scalar_exp(kc, a)).unwrap(),
            ];
            for law in &laws {
                let w = law.scaled(t, nu).unwrap();
                prop_assert_eq!(asymmetry(&hermitian_part(&w)), 0.0);
                prop_assert!(is_diagonal(&law.evaluate(t, nu).unwrap()));
            }
        }

        #[test]
        fn admissibility_is_monotone_in_the_weight(k in 0.5f64..5.0, a in 0.1f64..3.0, t in -10.0f64..10.0) {
            let law = MaterialLaw::hyperbolic(Kernel::scalar_exp(k, a), Kernel::zero(1)).unwrap();
            let nus = [0.01, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
            let ok: Vec<bool> = nus.iter().map(|&nu| law.evaluate(t, nu).is_ok()).collect();
            for w in ok.windows(2) {
                prop_assert!(!w[0] || w[1]);
            }
        }
    }
}
