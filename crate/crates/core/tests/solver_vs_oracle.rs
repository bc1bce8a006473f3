use integro_core::kernel_lab::Kernel;
use integro_core::linalg::{c, real_matrix, CVec};
use integro_core::material_law::MaterialLaw;
use integro_core::spectral_solver::{
    build_history_rhs, build_ivp_rhs, extrapolate_initial, nu_independence_check, reconstruct_from_history, solve,
    BlockOperator, DeltaWeight, EvolutionaryProblem,
};
use integro_core::viscoelastic::{assemble_system, default_initial_velocity, ElasticModel, Mesh1D};
use integro_core::volterra_oracle::{compare, step_hyperbolic, SteppingConfig};
use integro_core::weighted_time::{TimeGrid, WeightedSignal};

fn one(x: f64) -> CVec {
    CVec::from_element(1, c(x))
}

fn memory_law() -> MaterialLaw {
    MaterialLaw::hyperbolic(Kernel::scalar_exp(0.5, 1.0), Kernel::zero(1)).unwrap()
}

fn oscillator_grid() -> TimeGrid {
    TimeGrid::new(-4.0, 1e-3, 32768).unwrap()
}

#[test]
fn memory_oscillator_agrees_with_oracle() {
    let law = memory_law();
    let op = BlockOperator::skew(real_matrix(1, 1, &[1.0]));
    let parts = build_ivp_rhs(&law, &one(1.0), &one(0.0), None).unwrap();
    let p = EvolutionaryProblem::new(law.clone(), op.clone(), 1.0, oscillator_grid()).unwrap().with_parts(parts).unwrap();
    let sol = solve(&p).unwrap();
    let ts = step_hyperbolic(&law, &op, &one(1.0), &one(0.0), None, None, &SteppingConfig::new(1e-3, 10.0)).unwrap();
    let cmp = compare(&sol.u, &ts).unwrap();
    println!("memory oscillator: {cmp:?} causality {:e} residual {:e}", sol.causality_ratio, sol.residual_rel);
    assert!(cmp.weighted_l2_relative <= 1e-3);
    assert!(sol.causality_ratio <= 1e-8);
    assert!(sol.residual_rel <= 1e-8);
    let u0 = extrapolate_initial(&sol.u, 0.0).unwrap();
    assert!((u0[0] - c(1.0)).norm() <= 5e-3 && u0[1].norm() <= 5e-3);
}

#[test]
fn visco_demo_agrees_with_oracle() {
    for beta in [0.0, 0.3] {
        let mesh = Mesh1D::new(0.0, 1.0, 64).unwrap();
        let model = ElasticModel::homogeneous(mesh, 1.0, 1.0, beta, 1.0).unwrap();
        let sys = assemble_system(&model).unwrap();
        let v0 = default_initial_velocity(&mesh);
        let q0 = CVec::zeros(65);
        let parts = build_ivp_rhs(&sys.law, &v0, &q0, None).unwrap();
        let grid = TimeGrid::new(-4.0, 1e-3, 32768).unwrap();
        let t = std::time::Instant::now();
        let p = EvolutionaryProblem::new(sys.law.clone(), sys.op.clone(), 1.0, grid).unwrap().with_parts(parts).unwrap();
        let sol = solve(&p).unwrap();
        let ts_spec = t.elapsed();
        let ts = step_hyperbolic(&sys.law, &sys.op, &v0, &q0, None, None, &SteppingConfig::new(1e-3, 10.0)).unwrap();
        let cmp = compare(&sol.u, &ts).unwrap();
        let e = ts.energy(Some(&sys.op.gram()));
        println!(
            "visco beta {beta}: {cmp:?} causality {:e} spectral {:?} total {:?} energy {} -> {}",
            sol.causality_ratio,
            ts_spec,
            t.elapsed(),
            e[0],
            e[e.len() - 1]
        );
        assert!(cmp.weighted_l2_relative <= 1e-3);
        assert!(sol.causality_ratio <= 1e-8);
        if beta == 0.0 {
            assert!(e.iter().all(|x| (x - e[0]).abs() <= 1e-6 * e[0]));
        } else {
            assert!(e[e.len() - 1] < e[0]);
        }
    }
}

fn bump(t: f64, centre: f64, half: f64) -> f64 {
    let x = (t - centre) / half;
    if x.abs() < 1.0 {
        (1.0 - x * x).powi(4)
    } else {
        0.0
    }
}

#[test]
fn history_reconstruction_matches_full_line_run() {
    let law = memory_law();
    let op = BlockOperator::skew(real_matrix(1, 1, &[1.0]));
    let mut cfg = SteppingConfig::new(1e-3, 10.0);
    cfg.t_start = -10.0;
    let f = |t: f64| CVec::from_vec(vec![c(bump(t, -5.0, 3.0))]);
    let full = step_hyperbolic(&law, &op, &one(0.0), &one(0.0), Some(&f), None, &cfg).unwrap();
    let grid = TimeGrid::new(-12.0, 1e-3, 32768).unwrap();
    let past = |col: usize| {
        WeightedSignal::from_fn(grid, 1.0, 1, |t| {
            if t <= 1e-9 {
                full.at(t).map(|v| CVec::from_element(1, v[col])).unwrap_or_else(|| one(0.0))
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
    let mut errs = Vec::new();
    for weight in [DeltaWeight::Identity, DeltaWeight::Material] {
        let mut parts = build_history_rhs(&law, &vh, &qh, None).unwrap();
        parts.delta.as_mut().unwrap().weight = weight;
        let p = EvolutionaryProblem::new(law.clone(), op.clone(), 1.0, grid).unwrap().with_parts(parts).unwrap();
        let w = solve(&p).unwrap().u;
        let v = reconstruct_from_history(&w, &hist).unwrap();
        let after = full.columns(0, 2);
        let mut tail = after.clone();
        let zero = 10_000;
        tail.t_start = 0.0;
        tail.values = after.values.rows(zero, after.len() - zero).into_owned();
        let cmp = compare(&v, &tail).unwrap();
        println!("history ({weight:?} weight): {cmp:?}");
        errs.push(cmp.weighted_l2_relative);
    }
    assert!(errs[0] <= 1e-2);
}

#[test]
fn solutions_do_not_depend_on_the_weight() {
    let op = BlockOperator::skew(real_matrix(1, 1, &[1.0]));
    let elastic = MaterialLaw::hyperbolic(Kernel::zero(1), Kernel::zero(1)).unwrap();
    let grid = TimeGrid::new(-4.0, 1e-3, 32768).unwrap();
    let f = WeightedSignal::from_fn(grid, 1.0, 2, |t| CVec::from_vec(vec![c(bump(t, 2.0, 1.5)), c(0.0)])).unwrap();
    let p = EvolutionaryProblem::new(elastic, op.clone(), 1.0, grid).unwrap().with_time_rhs(f).unwrap();
    let d = nu_independence_check(&p, 2.0).unwrap();
    println!("harmonic bump nu 1 vs 2: {d:e}");
    assert!(d <= 1e-6);
    let law = memory_law();
    let parts = build_ivp_rhs(&law, &one(1.0), &one(0.0), None).unwrap();
    let p = EvolutionaryProblem::new(law, op, 1.0, grid).unwrap().with_parts(parts).unwrap();
    let d = nu_independence_check(&p, 1.5).unwrap();
    println!("memory oscillator nu 1 vs 1.5: {d:e}");
    assert!(d <= 1e-5);
}
