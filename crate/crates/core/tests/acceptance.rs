//! One pass/fail line per acceptance criterion. Exits non-zero if any fails.

use std::time::Instant;

use integro_core::kernel_lab::{
    check_hypotheses, convolve, verify_nu_propagation, ExpTerm, Kernel, SampleSpec,
};
use integro_core::linalg::{c, real_matrix, CMat, CVec, C64};
use integro_core::material_law::{certify, lemma_posb_bound, MaterialLaw};
use integro_core::spectral_solver::{
    build_history_rhs, build_ivp_rhs, extrapolate_initial, nu_independence_check, reconstruct_from_history, solve,
    BlockOperator, DeltaWeight, EvolutionaryProblem, Solution,
};
use integro_core::viscoelastic::{assemble_system, default_initial_velocity, run_demo, DemoConfig, ElasticModel, Mesh1D};
use integro_core::volterra_oracle::{compare, step_hyperbolic, SteppingConfig};
use integro_core::weighted_time::{
    apply_d0_inverse, cumulative_integral, fourier_laplace, inverse_fourier_laplace, spectrum_norm, weighted_norm,
    weighted_norm_between, TimeGrid, WeightedSignal,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn one(x: f64) -> CVec {
    CVec::from_element(1, c(x))
}

fn bump(t: f64, centre: f64, half: f64) -> f64 {
    let x = (t - centre) / half;
    if x.abs() < 1.0 {
        (1.0 - x * x).powi(4)
    } else {
        0.0
    }
}

/// Sum of Gaussians `a e^{−(t−m)²/2σ²}` per component, with its derivative.
#[derive(Clone)]
struct Gaussians {
    terms: Vec<(usize, C64, f64, f64)>,
}

impl Gaussians {
    fn random(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let count = rng.random_range(1..=4);
        let terms = (0..count)
            .map(|_| {
                let comp = rng.random_range(0..dim);
                let a = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                (comp, a, rng.random_range(0.0..6.0), rng.random_range(0.5..1.0))
            })
            .collect();
        Self { terms }
    }

    fn eval(&self, t: f64, dim: usize, derivative: bool) -> CVec {
        let mut v = CVec::zeros(dim);
        for &(comp, a, m, s) in &self.terms {
            let g = (-(t - m).powi(2) / (2.0 * s * s)).exp();
            v[comp] += if derivative { a * (-(t - m) / (s * s) * g) } else { a * g };
        }
        v
    }
}

fn rel_diff(a: &WeightedSignal, b: &WeightedSignal) -> f64 {
    weighted_norm(&a.sub(b).unwrap()) / weighted_norm(b)
}

fn transform_calculus() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = TimeGrid::new(-10.0, 0.01, 4096).unwrap();
    let dim = 2;
    let (mut parseval, mut round_trip, mut integral, mut bound_excess) = (0.0f64, 0.0f64, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..100 {
        let nu = rng.random_range(1.0..3.0);
        let gs = Gaussians::random(&mut rng, dim);
        let raw = WeightedSignal::from_fn(grid, nu, dim, |t| gs.eval(t, dim, false)).unwrap();
        let scale = 1.0 / weighted_norm(&raw);
        let u = raw.scaled(c(scale));

        let s = fourier_laplace(&u).unwrap();
        parseval = parseval.max((spectrum_norm(&s) - 1.0).abs());
        round_trip = round_trip.max(rel_diff(&inverse_fourier_laplace(&s).unwrap(), &u));

        // fourth-order cumulative quadrature: trapezoid with the end
        // correction −dt²/12 (u'(t) − u'(t_start))
        let du0 = gs.eval(grid.t_start, dim, true);
        let mut cum = cumulative_integral(&u);
        for j in 0..grid.n {
            let corr = (gs.eval(grid.node(j), dim, true) - &du0) * c(scale * grid.dt * grid.dt / 12.0);
            let row = cum.value(j) - corr;
            cum.values.row_mut(j).copy_from(&row.transpose());
        }
        let spectral = apply_d0_inverse(&u).unwrap();
        integral = integral.max(rel_diff(&spectral, &cum));
        bound_excess = bound_excess.max(weighted_norm(&spectral) - weighted_norm(&u) / nu);
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = parseval <= 1e-9 && round_trip <= 1e-12 && integral <= 1e-6 && bound_excess <= 1e-10 && secs < 10.0;
    outcome(
        passed,
        format!(
            "Parseval {parseval:.2e} (≤ 1e-9), round trip {round_trip:.2e} (≤ 1e-12), inverse derivative vs cumulative integral {integral:.2e} (≤ 1e-6), ‖∂⁻¹u‖ − ‖u‖/ν = {bound_excess:.2e} (≤ 1e-10), {secs:.2} s (< 10 s)"
        ),
    )
}

fn random_symmetric(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> CMat {
    let m = CMat::from_fn(d, d, |_, _| c(rng.random_range(lo..hi)));
    (&m + m.transpose()) * c(0.5)
}

fn random_exp_kernel(rng: &mut ChaCha8Rng, d: usize) -> Kernel {
    let count = rng.random_range(1..=3);
    let terms = (0..count)
        .map(|_| ExpTerm { coeff: random_symmetric(rng, d, -0.5, 0.5), rate: rng.random_range(0.2..3.0) })
        .collect();
    Kernel::exp_sum(d, terms).unwrap()
}

fn convolution_theorem() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = TimeGrid::new(-10.0, 0.01, 4096).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let d = rng.random_range(1..=2);
        let k = random_exp_kernel(&mut rng, d);
        let nu = rng.random_range(0.5..2.0);
        let gs = Gaussians::random(&mut rng, d);
        let u = WeightedSignal::from_fn(grid, nu, d, |t| gs.eval(t, d, false)).unwrap();
        let lhs = fourier_laplace(&convolve(&k, &u).unwrap()).unwrap();
        let mut rhs = fourier_laplace(&u).unwrap();
        let sym = k.symbols_on_grid(&grid, nu).unwrap();
        for (j, m) in sym.iter().enumerate() {
            let v = m * rhs.value(j);
            rhs.values.row_mut(j).copy_from(&v.transpose());
        }
        let mut diff = lhs.clone();
        diff.values -= &rhs.values;
        worst = worst.max(spectrum_norm(&diff) / spectrum_norm(&rhs));
    }
    outcome(worst <= 1e-6, format!("max relative transform mismatch {worst:.2e} over 20 kernels (≤ 1e-6)"))
}

fn operator_norm_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = TimeGrid::new(-10.0, 0.01, 4096).unwrap();
    let mut excess = f64::NEG_INFINITY;
    let mut best_ratio = 0.0f64;
    for i in 0..100 {
        let d = rng.random_range(1..=2);
        let k = random_exp_kernel(&mut rng, d);
        let nu = rng.random_range(0.5..2.0);
        let u = if i % 2 == 0 {
            let gs = Gaussians::random(&mut rng, d);
            WeightedSignal::from_fn(grid, nu, d, |t| gs.eval(t, d, false)).unwrap()
        } else {
            // rough data: uniform noise on [0, 5]
            let noise: Vec<C64> = (0..grid.n * d).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let mut u = WeightedSignal::zeros(grid, nu, d).unwrap();
            for j in 0..grid.n {
                if (0.0..5.0).contains(&grid.node(j)) {
                    for q in 0..d {
                        u.values[(j, q)] = noise[j * d + q];
                    }
                }
            }
            u
        };
        let ratio = weighted_norm(&convolve(&k, &u).unwrap()) / weighted_norm(&u);
        let bound = k.l1nu_norm(nu).unwrap();
        excess = excess.max(ratio - bound);
        best_ratio = best_ratio.max(ratio / bound);
    }
    outcome(
        excess <= 1e-9,
        format!("max ‖B∗u‖/‖u‖ − |B|₁,ν = {excess:.2e} (≤ 1e-9), tightest ratio/bound {best_ratio:.3} over 100 signals"),
    )
}

fn positivity_certificate() -> Outcome {
    let spec = SampleSpec::default();
    let half = Kernel::scalar_exp(0.5, 1.0);
    let law = MaterialLaw::hyperbolic(half.clone(), Kernel::zero(1)).unwrap();
    let cert = certify(&law, 1.0, &spec).unwrap();
    // independent value: β = ∫ ½e^{−2t} dt by composite Simpson on [0, 40]
    let (n, h) = (40_000, 1e-3);
    let f = |t: f64| 0.5 * (-2.0 * t).exp();
    let beta = h / 3.0 * (1..n).map(|j| if j % 2 == 1 { 4.0 } else { 2.0 } * f(j as f64 * h)).sum::<f64>()
        + h / 3.0 * (f(0.0) + f(n as f64 * h));
    let derived = (1.0 - beta) / ((1.0 + beta) * (1.0 + beta));
    let lemma = lemma_posb_bound(&half, 1.0).unwrap();
    let hyper_ok = cert.c_observed >= 0.48 - 1e-9 && (lemma - 0.48).abs() < 1e-12 && (derived - 0.48).abs() < 1e-12;

    let para = MaterialLaw::parabolic(Kernel::scalar_exp(0.4, 1.0), Kernel::zero(1)).unwrap();
    let sup = (0..=200_000).map(|i| 0.4 / C64::new(2.0, i as f64 * 1e-2).norm()).fold(0.0, f64::max);
    let pcert = certify(&para, 1.0, &spec).unwrap();
    let para_ok = (sup - 0.2).abs() < 1e-12 && pcert.block_minima[1] >= 0.75;
    outcome(
        hyper_ok && para_ok,
        format!(
            "c_observed {:.6} (≥ 0.48 − 1e-9), lemma bound {lemma:.12}, independent {derived:.12}; parabolic sup {sup:.3}, block-1 minimum {:.6} (≥ 0.75)",
            cert.c_observed, pcert.block_minima[1]
        ),
    )
}

fn hypothesis_propagation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = SampleSpec::default();
    let (mut checked, mut worst) = (0usize, f64::NEG_INFINITY);
    let mut failed = Vec::new();
    for i in 0..40 {
        let d = rng.random_range(1..=3);
        // commuting coefficients share a random eigenbasis; some have
        // negative weights or a non-commuting extra term and fail at ν₀
        let q = random_symmetric(&mut rng, d, -1.0, 1.0).symmetric_eigen().eigenvectors;
        let count = rng.random_range(1..=3);
        let mut terms: Vec<ExpTerm> = (0..count)
            .map(|_| {
                let diag = CVec::from_fn(d, |_, _| c(rng.random_range(-0.2..1.0)));
                ExpTerm { coeff: &q * CMat::from_diagonal(&diag) * q.adjoint(), rate: rng.random_range(0.1..3.0) }
            })
            .collect();
        if i % 5 == 4 {
            terms.push(ExpTerm { coeff: random_symmetric(&mut rng, d, 0.0, 0.5), rate: 1.7 });
        }
        let mut k = Kernel::exp_sum(d, terms).unwrap();
        if i % 4 == 3 {
            k = k.to_sampled(0.01, 40.0).unwrap();
        }
        let nu0 = rng.random_range(0.3..1.5);
        if !check_hypotheses(&k, nu0, &spec).unwrap().all_ok() {
            continue;
        }
        checked += 1;
        let rep = verify_nu_propagation(&k, nu0, &[2.0 * nu0, 4.0 * nu0, 8.0 * nu0], &spec).unwrap();
        worst = worst.max(rep.worst);
        if rep.worst > 1e-12 {
            failed.push(i);
        }
    }
    outcome(
        failed.is_empty() && checked > 0,
        format!("{checked} kernels pass at ν₀; worst sign value at 2,4,8·ν₀ is {worst:.2e} (≤ 1e-12); failing {failed:?}"),
    )
}

fn oscillator_grid() -> TimeGrid {
    TimeGrid::new(-4.0, 1e-3, 32768).unwrap()
}

fn memory_law() -> MaterialLaw {
    MaterialLaw::hyperbolic(Kernel::scalar_exp(0.5, 1.0), Kernel::zero(1)).unwrap()
}

fn elastic_law() -> MaterialLaw {
    MaterialLaw::hyperbolic(Kernel::zero(1), Kernel::zero(1)).unwrap()
}

fn unit_op() -> BlockOperator {
    BlockOperator::skew(real_matrix(1, 1, &[1.0]))
}

fn ivp(law: &MaterialLaw) -> Solution {
    let parts = build_ivp_rhs(law, &one(1.0), &one(0.0), None).unwrap();
    let p = EvolutionaryProblem::new(law.clone(), unit_op(), 1.0, oscillator_grid()).unwrap().with_parts(parts).unwrap();
    solve(&p).unwrap()
}

/// Mass before `start` over total mass, measured directly on the solution.
fn pre_support(u: &WeightedSignal, start: f64) -> f64 {
    weighted_norm_between(u, f64::NEG_INFINITY, start - 0.5 * u.grid.dt) / weighted_norm(u)
}

struct Shared {
    memory: Solution,
    visco_causality: f64,
}

fn cross_validation(shared: &mut Option<Shared>) -> Outcome {
    let start = Instant::now();
    let law = memory_law();
    let sol = ivp(&law);
    let ts = step_hyperbolic(&law, &unit_op(), &one(1.0), &one(0.0), None, None, &SteppingConfig::new(1e-3, 10.0)).unwrap();
    let osc = compare(&sol.u, &ts).unwrap().weighted_l2_relative;
    let demo = run_demo(&DemoConfig::default()).unwrap();
    let visco = demo.comparison.as_ref().unwrap().weighted_l2_relative;
    let spectral = demo.spectral.as_ref().unwrap();
    let visco_causality = pre_support(&spectral.u, 0.0);
    let secs = start.elapsed().as_secs_f64();
    *shared = Some(Shared { memory: sol, visco_causality });
    outcome(
        osc <= 1e-3 && visco <= 1e-3 && secs < 60.0,
        format!("memory oscillator {osc:.2e}, visco-elastic m = 64 {visco:.2e} (≤ 1e-3), {secs:.1} s (< 60 s)"),
    )
}

fn causality(shared: &Shared) -> Outcome {
    let mut ratios = vec![("memory oscillator", pre_support(&shared.memory.u, 0.0))];
    ratios.push(("harmonic oscillator", pre_support(&ivp(&elastic_law()).u, 0.0)));
    ratios.push(("visco-elastic demo", shared.visco_causality));
    let grid = oscillator_grid();
    let forcing = |d: usize| {
        WeightedSignal::from_fn(grid, 1.0, d, |t| {
            let mut v = CVec::zeros(d);
            v[0] = c(bump(t, 2.0, 1.5));
            v
        })
        .unwrap()
    };
    let para = MaterialLaw::parabolic(Kernel::scalar_exp(0.4, 1.0), Kernel::zero(1)).unwrap();
    let p = EvolutionaryProblem::new(para, unit_op(), 1.0, grid).unwrap().with_time_rhs(forcing(2)).unwrap();
    ratios.push(("forced parabolic", pre_support(&solve(&p).unwrap().u, 0.5)));
    let vlasov = MaterialLaw::vlasov(Kernel::scalar_exp(0.3, 1.0), Kernel::scalar_exp(0.2, 2.0)).unwrap();
    let op = BlockOperator::selfadjoint_positive(real_matrix(1, 1, &[1.5])).unwrap();
    let p = EvolutionaryProblem::new(vlasov, op, 1.0, grid).unwrap().with_time_rhs(forcing(2)).unwrap();
    ratios.push(("forced Vlasov-type", pre_support(&solve(&p).unwrap().u, 0.5)));
    let p = EvolutionaryProblem::new(memory_law(), unit_op(), 1.0, grid).unwrap().with_time_rhs(forcing(2)).unwrap();
    ratios.push(("forced memory oscillator", pre_support(&solve(&p).unwrap().u, 0.5)));
    let worst = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let list: Vec<String> = ratios.iter().map(|(n, r)| format!("{n} {r:.1e}")).collect();
    outcome(worst <= 1e-8, format!("max pre-support ratio {worst:.2e} (≤ 1e-8): {}", list.join(", ")))
}

fn ivp_attainment(shared: &Shared) -> Outcome {
    let dt = oscillator_grid().dt;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, u) in [("harmonic", ivp(&elastic_law()).u), ("memory", shared.memory.u.clone())] {
        let u0 = extrapolate_initial(&u, 0.0).unwrap();
        let err = (u0[0] - c(1.0)).norm().max(u0[1].norm());
        worst = worst.max(err);
        parts.push(format!("{name} {err:.2e}"));
    }
    outcome(worst <= 5.0 * dt, format!("|u(0+) − u⁰| {} (≤ 5·dt = {:.0e})", parts.join(", "), 5.0 * dt))
}

fn history_reconstruction() -> Outcome {
    let law = memory_law();
    let op = unit_op();
    let mut cfg = SteppingConfig::new(1e-3, 10.0);
    cfg.t_start = -10.0;
    let f = |t: f64| one(bump(t, -5.0, 3.0));
    let full = step_hyperbolic(&law, &op, &one(0.0), &one(0.0), Some(&f), None, &cfg).unwrap();
    let grid = TimeGrid::new(-12.0, 1e-3, 32768).unwrap();
    let past = |col: usize| {
        WeightedSignal::from_fn(grid, 1.0, 1, |t| {
            if t <= 1e-9 {
                full.at(t).map(|v| one(v[col].re)).unwrap_or_else(|| one(0.0))
            } else {
                one(0.0)
            }
        })
        .unwrap()
    };
    let (vh, qh) = (past(0), past(1));
    let mut hist = WeightedSignal::zeros(grid, 1.0, 2).unwrap();
    hist.values.column_mut(0).copy_from(&vh.values.column(0));
    hist.values.column_mut(1).copy_from(&qh.values.column(0));
    let mut parts = build_history_rhs(&law, &vh, &qh, None).unwrap();
    parts.delta.as_mut().unwrap().weight = DeltaWeight::Identity;
    let p = EvolutionaryProblem::new(law, op, 1.0, grid).unwrap().with_parts(parts).unwrap();
    let w = solve(&p).unwrap().u;
    let v = reconstruct_from_history(&w, &hist).unwrap();
    let zero = 10_000;
    let mut tail = full.clone();
    tail.t_start = 0.0;
    tail.values = full.values.rows(zero, full.len() - zero).into_owned();
    let err = compare(&v, &tail).unwrap().weighted_l2_relative;
    outcome(err <= 1e-2, format!("history workflow vs full-line oracle {err:.2e} (≤ 1e-2)"))
}

fn nu_independence() -> Outcome {
    let grid = oscillator_grid();
    let f = WeightedSignal::from_fn(grid, 1.0, 2, |t| CVec::from_vec(vec![c(bump(t, 2.0, 1.5)), c(0.0)])).unwrap();
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for (name, law) in [("harmonic", elastic_law()), ("memory", memory_law())] {
        let p = EvolutionaryProblem::new(law, unit_op(), 1.0, grid).unwrap().with_time_rhs(f.clone()).unwrap();
        let d = nu_independence_check(&p, 2.0).unwrap();
        worst = worst.max(d);
        parts.push(format!("{name} {d:.2e}"));
    }
    outcome(worst <= 1e-5, format!("ν = 1 vs ν = 2: {} (≤ 1e-5)", parts.join(", ")))
}

fn conservation() -> Outcome {
    let mesh = Mesh1D::new(0.0, 1.0, 64).unwrap();
    let model = ElasticModel::homogeneous(mesh, 1.0, 1.0, 0.0, 1.0).unwrap();
    let sys = assemble_system(&model).unwrap();
    let v0 = default_initial_velocity(&mesh);
    let ts = step_hyperbolic(&sys.law, &sys.op, &v0, &CVec::zeros(65), None, None, &SteppingConfig::new(1e-3, 10.0)).unwrap();
    let e = ts.energy(Some(&sys.op.gram()));
    let drift = e.iter().map(|x| (x - e[0]).abs()).fold(0.0, f64::max) / e[0];
    let div_grad_exact = sys.div == -sys.grad.transpose();
    let defect = sys.op.skew_defect();
    outcome(
        drift <= 1e-6 && div_grad_exact && defect == 0.0,
        format!("relative energy drift {drift:.2e} (≤ 1e-6), D = −Gᵀ exactly: {div_grad_exact}, weighted skew defect {defect:e}"),
    )
}

fn main() {
    let mut shared = None;
    let mut results: Vec<(&str, Outcome)> = vec![
        ("transform calculus", transform_calculus()),
        ("convolution theorem", convolution_theorem()),
        ("operator-norm bound", operator_norm_bound()),
        ("positivity certificate", positivity_certificate()),
        ("hypothesis propagation", hypothesis_propagation()),
        ("solver cross-validation", cross_validation(&mut shared)),
    ];
    let shared = shared.expect("cross-validation ran");
    results.push(("causality", causality(&shared)));
    results.push(("initial-value attainment", ivp_attainment(&shared)));
    results.push(("history reconstruction", history_reconstruction()));
    results.push(("weight independence", nu_independence()));
    results.push(("conservation", conservation()));
    let mut failures = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {:>2} {:<26} {}  {}", i + 1, name, if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failures += usize::from(!o.passed);
    }
    println!("{} of {} criteria passed", results.len() - failures, results.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
