//! Cross-solver agreement, window chaining and long-run marching.

use rd_pdhg::baselines::{
    fixed_point_solve, imex_step, newton_solve, nonlinear_sor_solve, KrylovParams,
};
use rd_pdhg::driver::{adaptive_march, march, AdaptiveRule, MarchPlan, SolverKind, SolverSettings};
use rd_pdhg::*;

fn inf_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

fn fast_params(tol: f64) -> PdhgParams {
    PdhgParams {
        tau_u: 0.55,
        tau_p: 0.95,
        tol,
        max_iter: 50_000,
        ..PdhgParams::default()
    }
}

fn pdhg_root(m: &RDModel, u0: &Field, n_t: usize, h: f64, tol: f64) -> SpaceTimeVec {
    let prob = WindowProblem::new(m, u0.clone(), n_t, h).unwrap();
    let pc = Precond::for_problem(&prob).unwrap();
    let (u, stats) = solve_window(
        &prob,
        &pc,
        &fast_params(tol),
        SpaceTimeVec::replicate(u0, n_t),
        prob.zeros(),
    )
    .unwrap();
    assert!(
        stats.converged,
        "pdhg stalled at {:e}",
        stats.final_residual()
    );
    u
}

#[test]
fn cahn_hilliard_roots_agree() {
    let m = build_model(ModelKind::CahnHilliard, ModelParams::new(0.1, 16)).unwrap();
    let u0 = initial_condition(ModelKind::CahnHilliard, &m.grid);
    let (h, tol) = (5e-4, 1e-9);
    let pdhg = pdhg_root(&m, &u0, 1, h, tol);
    let newton = newton_solve(&m, &u0, h, KrylovParams::default(), tol, 50).unwrap();
    let fixed = fixed_point_solve(&m, &u0, h, tol, 10_000).unwrap();
    assert!(inf_gap(pdhg.data(), newton.u.values()) < 1e-7);
    assert!(inf_gap(pdhg.data(), fixed.u.values()) < 1e-7);
}

#[test]
fn variable_mobility_roots_agree() {
    let m = build_model(ModelKind::VarCoeff, ModelParams::new(0.1, 16)).unwrap();
    let u0 = initial_condition(ModelKind::VarCoeff, &m.grid);
    let (h, tol) = (0.002, 1e-9);
    let pdhg = pdhg_root(&m, &u0, 1, h, tol);
    let others = [
        newton_solve(&m, &u0, h, KrylovParams::default(), tol, 50)
            .unwrap()
            .u,
        fixed_point_solve(&m, &u0, h, tol, 10_000).unwrap().u,
        nonlinear_sor_solve(&m, &u0, h, 1.2, tol, 10_000).unwrap().u,
    ];
    for u in &others {
        assert!(inf_gap(pdhg.data(), u.values()) < 1e-7);
    }
}

#[test]
fn sixth_order_roots_agree() {
    let m = build_model(ModelKind::SixthOrder, ModelParams::new(0.18, 16)).unwrap();
    let u0 = initial_condition(ModelKind::SixthOrder, &m.grid);
    let (h, tol) = (0.005, 1e-9);
    let pdhg = pdhg_root(&m, &u0, 1, h, tol);
    let newton = newton_solve(&m, &u0, h, KrylovParams::default(), tol, 50).unwrap();
    assert!(inf_gap(pdhg.data(), newton.u.values()) < 1e-7);
}

#[test]
fn one_window_equals_chained_single_steps() {
    let m = build_model(ModelKind::AllenCahn, ModelParams::new(0.1, 16)).unwrap();
    let u0 = initial_condition(ModelKind::AllenCahn, &m.grid);
    let (h, n_t, tol) = (0.002, 4, 1e-10);
    let window = pdhg_root(&m, &u0, n_t, h, tol);
    let mut u = u0;
    for t in 0..n_t {
        u = newton_solve(&m, &u, h, KrylovParams::default(), tol, 50)
            .unwrap()
            .u;
        assert!(inf_gap(window.block(t), u.values()) < 1e-8, "slice {t}");
    }
}

#[test]
fn implicit_and_imex_agree_to_first_order() {
    let m = build_model(ModelKind::AllenCahn, ModelParams::new(0.1, 16)).unwrap();
    let u0 = initial_condition(ModelKind::AllenCahn, &m.grid);
    let gap = |h: f64| {
        let imex = imex_step(&m, &u0, h, KrylovParams::default()).unwrap();
        let implicit = newton_solve(&m, &u0, h, KrylovParams::default(), 1e-11, 50)
            .unwrap()
            .u;
        inf_gap(imex.values(), implicit.values())
    };
    // One-step difference between two first-order schemes is O(h²).
    // With b = 10 the asymptotic regime starts below h ≈ 1e-4.
    let ratio = gap(5e-5) / gap(2.5e-5);
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn fixed_march_matches_across_solvers() {
    let m = build_model(ModelKind::AllenCahn, ModelParams::new(0.1, 16)).unwrap();
    let u0 = initial_condition(ModelKind::AllenCahn, &m.grid);
    let settings = SolverSettings {
        pdhg: fast_params(1e-9),
        ..SolverSettings::default()
    };
    let finals: Vec<Field> = [SolverKind::Pdhg, SolverKind::Newton, SolverKind::FixedPoint]
        .into_iter()
        .map(|kind| {
            let r = march(&m, &u0, &MarchPlan::fixed(5, 2, 0.002, kind), &settings).unwrap();
            assert!(r.aborted.is_none());
            assert!((r.t_final - 0.02).abs() < 1e-12);
            r.final_u
        })
        .collect();
    assert!(inf_gap(finals[0].values(), finals[1].values()) < 1e-7);
    assert!(inf_gap(finals[0].values(), finals[2].values()) < 1e-7);
}

#[test]
fn adaptive_variable_mobility_run_reaches_large_steps() {
    let m = build_model(ModelKind::VarCoeff, ModelParams::new(0.01, 32)).unwrap();
    let u0 = initial_condition(ModelKind::VarCoeff, &m.grid);
    let settings = SolverSettings {
        pdhg: PdhgParams {
            tau_u: 0.5,
            tau_p: 0.9,
            tol: 1e-6,
            max_iter: 2000,
            ..PdhgParams::default()
        },
        ..SolverSettings::default()
    };
    let r = adaptive_march(
        &m,
        &u0,
        0.01,
        1,
        AdaptiveRule::new(0.08),
        20.0,
        SolverKind::Pdhg,
        &settings,
    )
    .unwrap();
    assert!(r.aborted.is_none());
    assert!((r.t_final - 20.0).abs() < 1e-9, "t_final {}", r.t_final);
    let mean = r.mean_accepted_ht().unwrap();
    assert!((0.02..=0.08).contains(&mean), "mean h_t {mean}");
    assert!(r.ht_schedule.iter().all(|&h| h <= 0.08 + 1e-15));
    let energies: Vec<f64> = r.energy_trace.iter().map(|e| e.1).collect();
    assert!(energies.last().unwrap() < &energies[0]);
}
