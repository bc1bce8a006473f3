//! One-dimensional visco-elastic wave system.
//!
//! Unknowns are the velocity `v` at the `m` interior nodes and the scaled
//! stress `C^{−1/2}T` on the `m + 1` cells. With the forward difference
//! `G = Grad_c` (zero Dirichlet values at both ends) the system reads
//!
//! ```text
//! ∂₀ diag(1, (1 − C^{−1/2}B∗C^{−1/2})^{−1}) (v, C^{−1/2}T)
//!   + [[0, −ρ^{−1}Div C^{1/2}], [−C^{1/2}G, 0]] (v, C^{−1/2}T) = (ρ^{−1}f, 0)
//! ```
//!
//! with `Div = −Gᵀ`. The ρ-weighted inner product `⟨x|y⟩ = h Σ ρ_i x̄_i y_i`
//! on velocities makes the off-diagonal block skew.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel_lab::{check_hypotheses, ExpTerm, HypothesisReport, Kernel, KernelForm, SampleSpec};
use crate::linalg::{asymmetry, c, commutator, hermitian_function, hermitian_sqrt, lambda_min, max_abs, CMat, CVec};
use crate::material_law::MaterialLaw;
use crate::spectral_solver::{build_ivp_rhs, solve, BlockOperator, EvolutionaryProblem, Solution};
use crate::volterra_oracle::{compare, step_hyperbolic, Comparison, SteppingConfig, TimeSeries};
use crate::weighted_time::TimeGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh1D {
    pub x_start: f64,
    pub x_end: f64,
    /// Interior node count.
    pub m: usize,
}

impl Mesh1D {
    pub fn new(x_start: f64, x_end: f64, m: usize) -> Result<Self> {
        let mesh = Self { x_start, x_end, m };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || !(self.x_end > self.x_start) || !self.x_start.is_finite() || !self.x_end.is_finite() {
            return Err(Error::InvalidInput(format!(
                "mesh needs m ≥ 1 and x_end > x_start (m = {}, [{}, {}])",
                self.m, self.x_start, self.x_end
            )));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        (self.x_end - self.x_start) / (self.m + 1) as f64
    }

    /// Interior node positions.
    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.m).map(|i| self.x_start + i as f64 * self.h()).collect()
    }

    /// Cell midpoints (strain positions).
    pub fn cells(&self) -> Vec<f64> {
        (0..=self.m).map(|i| self.x_start + (i as f64 + 0.5) * self.h()).collect()
    }
}

/// `G` ((m+1)×m forward differences over `h`) and `D = −Gᵀ`.
pub fn assemble_grad_div(mesh: &Mesh1D) -> (CMat, CMat) {
    let m = mesh.m;
    let h = mesh.h();
    let mut g = CMat::zeros(m + 1, m);
    for i in 0..m {
        g[(i, i)] = c(1.0 / h);
        g[(i + 1, i)] = c(-1.0 / h);
    }
    let d = -g.transpose();
    (g, d)
}

#[derive(Clone, Debug)]
pub struct ElasticModel {
    pub mesh: Mesh1D,
    /// Density per interior node.
    pub rho: Vec<f64>,
    /// Elasticity operator on the strain space, `(m+1)×(m+1)`.
    pub c_op: CMat,
    /// Relaxation kernel over the strain space.
    pub kernel: Kernel,
}

impl ElasticModel {
    pub fn new(mesh: Mesh1D, rho: Vec<f64>, c_op: CMat, kernel: Kernel) -> Result<Self> {
        let model = Self { mesh, rho, c_op, kernel };
        model.validate()?;
        Ok(model)
    }

    /// Homogeneous model: constant `ρ`, `C = c·1`, kernel `β e^{−a t}·1`.
    pub fn homogeneous(mesh: Mesh1D, rho: f64, c_val: f64, beta: f64, rate: f64) -> Result<Self> {
        let n = mesh.m + 1;
        let kernel = if beta == 0.0 {
            Kernel::zero(n)
        } else {
            Kernel::matrix_exp(CMat::identity(n, n) * c(beta), rate)?
        };
        Self::new(mesh, vec![rho; mesh.m], CMat::identity(n, n) * c(c_val), kernel)
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        let (m, n) = (self.mesh.m, self.mesh.m + 1);
        if self.rho.len() != m {
            return Err(Error::DimensionMismatch { context: "density", expected: m, got: self.rho.len() });
        }
        if self.rho.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidInput("density must be finite and strictly positive".into()));
        }
        if self.c_op.shape() != (n, n) || self.kernel.dim != n {
            return Err(Error::DimensionMismatch { context: "strain-space operators", expected: n, got: self.c_op.nrows() });
        }
        if asymmetry(&self.c_op) > 1e-12 * max_abs(&self.c_op) {
            return Err(Error::InvalidInput("C must be selfadjoint".into()));
        }
        if lambda_min(&self.c_op) <= 0.0 {
            return Err(Error::InvalidInput("C must be strictly positive definite".into()));
        }
        Ok(())
    }

    /// `h·diag(ρ)` on velocities.
    pub fn velocity_gram(&self) -> CMat {
        let h = self.mesh.h();
        CMat::from_diagonal(&CVec::from_iterator(self.mesh.m, self.rho.iter().map(|r| c(h * r))))
    }

    /// `h·1` on stresses.
    pub fn stress_gram(&self) -> CMat {
        let n = self.mesh.m + 1;
        CMat::identity(n, n) * c(self.mesh.h())
    }

    pub fn c_sqrt(&self) -> CMat {
        hermitian_sqrt(&self.c_op)
    }

    pub fn c_inv_sqrt(&self) -> CMat {
        hermitian_function(&self.c_op, |x| 1.0 / x.sqrt())
    }
}

/// `C^{−1/2}B(·)C^{−1/2}`; refuses kernels whose values do not commute
/// with `C`.
pub fn transform_kernel(model: &ElasticModel) -> Result<Kernel> {
    let ci = model.c_inv_sqrt();
    let cscale = max_abs(&model.c_op).max(1.0);
    let check = |k: &CMat| -> Result<()> {
        let comm = max_abs(&commutator(&model.c_op, k));
        if comm > 1e-12 * cscale * max_abs(k).max(1.0) {
            return Err(Error::NonCommuting { commutator: comm });
        }
        Ok(())
    };
    let conj = |k: &CMat| &ci * k * &ci;
    match &model.kernel.form {
        KernelForm::ExpSum(terms) => {
            let mut out = Vec::with_capacity(terms.len());
            for t in terms {
                check(&t.coeff)?;
                out.push(ExpTerm { coeff: conj(&t.coeff), rate: t.rate });
            }
            Kernel::exp_sum(model.kernel.dim, out)
        }
        KernelForm::Sampled { dt, values } => {
            for v in values {
                check(v)?;
            }
            Kernel::sampled(*dt, values.iter().map(conj).collect(), model.kernel.mu)
        }
    }
}

pub fn transformed_hypotheses(model: &ElasticModel, nu0: f64, spec: &SampleSpec) -> Result<HypothesisReport> {
    check_hypotheses(&transform_kernel(model)?, nu0, spec)
}

/// The assembled problem: hyperbolic law with `C`-kernel zero and the
/// transformed `B`, and `A = C^{1/2}G` in the weighted inner products.
#[derive(Clone, Debug)]
pub struct ViscoSystem {
    pub law: MaterialLaw,
    pub op: BlockOperator,
    pub grad: CMat,
    pub div: CMat,
}

pub fn assemble_system(model: &ElasticModel) -> Result<ViscoSystem> {
    model.validate()?;
    let (g, d) = assemble_grad_div(&model.mesh);
    let a = model.c_sqrt() * &g;
    let op = BlockOperator::weighted(a, model.velocity_gram(), model.stress_gram())?;
    let law = MaterialLaw::hyperbolic(transform_kernel(model)?, Kernel::zero(model.mesh.m))?;
    Ok(ViscoSystem { law, op, grad: g, div: d })
}

impl ViscoSystem {
    /// `⟨Av, Φ⟩_{W₁} − ⟨v, A*Φ⟩_{W₀}`.
    pub fn adjoint_defect(&self, v: &CVec, phi: &CVec) -> f64 {
        let w0 = self.op.w0.as_ref().expect("weighted operator");
        let w1 = self.op.w1.as_ref().expect("weighted operator");
        let lhs = (phi.adjoint() * w1 * (&self.op.a * v))[(0, 0)];
        let rhs = ((&self.op.a_star * phi).adjoint() * w0 * v)[(0, 0)];
        (lhs - rhs).norm()
    }

    /// `½(‖v‖²_{W₀} + ‖q‖²_{W₁})` for a stacked state.
    pub fn energy(&self, state: &CVec) -> f64 {
        0.5 * (state.adjoint() * self.op.gram() * state)[(0, 0)].re
    }
}

/// `sin³(πξ)` on the interior nodes, `ξ` the relative position.
pub fn default_initial_velocity(mesh: &Mesh1D) -> CVec {
    let len = mesh.x_end - mesh.x_start;
    CVec::from_iterator(
        mesh.m,
        mesh.nodes().into_iter().map(|x| c((std::f64::consts::PI * (x - mesh.x_start) / len).sin().powi(3))),
    )
}

/// Parameters of the homogeneous demo: `ρ`, `C = c·1`, `B = β e^{−a t}·1`,
/// initial velocity `sin³(πξ)` and zero stress.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub mesh: Mesh1D,
    pub rho: f64,
    pub c: f64,
    pub beta: f64,
    pub rate: f64,
    pub stepping: SteppingConfig,
    /// Spectral cross-check; `None` skips it.
    pub spectral: Option<SpectralRun>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralRun {
    pub nu: f64,
    pub grid: TimeGrid,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            mesh: Mesh1D { x_start: 0.0, x_end: 1.0, m: 64 },
            rho: 1.0,
            c: 1.0,
            beta: 0.3,
            rate: 1.0,
            stepping: SteppingConfig::new(1e-3, 10.0),
            spectral: Some(SpectralRun { nu: 1.0, grid: TimeGrid { t_start: -4.0, dt: 1e-3, n: 32768 } }),
        }
    }
}

pub struct DemoRun {
    pub system: ViscoSystem,
    pub c_sqrt: CMat,
    /// Columns `(v, C^{−1/2}T)`.
    pub oracle: TimeSeries,
    pub energy: Vec<f64>,
    pub spectral: Option<Solution>,
    pub comparison: Option<Comparison>,
}

pub fn run_demo(cfg: &DemoConfig) -> Result<DemoRun> {
    let model = ElasticModel::homogeneous(cfg.mesh, cfg.rho, cfg.c, cfg.beta, cfg.rate)?;
    let system = assemble_system(&model)?;
    let m = cfg.mesh.m;
    let v0 = default_initial_velocity(&cfg.mesh);
    let q0 = CVec::zeros(m + 1);
    let oracle = step_hyperbolic(&system.law, &system.op, &v0, &q0, None, None, &cfg.stepping)?;
    let gram = system.op.gram();
    let energy = oracle.energy(Some(&gram)).into_iter().map(|e| 0.5 * e).collect();
    let (spectral, comparison) = match &cfg.spectral {
        Some(run) => {
            let parts = build_ivp_rhs(&system.law, &v0, &q0, None)?;
            let p = EvolutionaryProblem::new(system.law.clone(), system.op.clone(), run.nu, run.grid)?.with_parts(parts)?;
            let sol = solve(&p)?;
            let cmp = compare(&sol.u, &oracle)?;
            (Some(sol), Some(cmp))
        }
        None => (None, None),
    };
    Ok(DemoRun { system, c_sqrt: model.c_sqrt(), oracle, energy, spectral, comparison })
}

impl DemoRun {
    /// Displacement `u(t) = ∫₀ᵗ v` by the trapezoid rule (zero initial
    /// displacement).
    pub fn displacement(&self) -> TimeSeries {
        let m = self.system.op.dims().0;
        let v = self.oracle.columns(0, m);
        let mut out = v.clone();
        out.values.row_mut(0).fill(c(0.0));
        for n in 1..v.len() {
            let inc = (v.values.row(n) + v.values.row(n - 1)) * c(0.5 * v.dt);
            let prev = out.values.row(n - 1).into_owned();
            out.values.row_mut(n).copy_from(&(prev + inc));
        }
        out
    }

    /// Stress `T = C^{1/2}q`.
    pub fn stress(&self) -> TimeSeries {
        let (m, n) = self.system.op.dims();
        let mut out = self.oracle.columns(m, n);
        for k in 0..out.len() {
            let t = &self.c_sqrt * out.value(k);
            out.values.row_mut(k).copy_from(&t.transpose());
        }
        out
    }
}
