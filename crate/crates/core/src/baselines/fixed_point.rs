use super::{inner_params, KrylovParams, ShiftedSolve, StepOutcome};
use crate::equations::RDModel;
use crate::error::{Error, Result};
use crate::spectral::Field;
use crate::system::{residual_inf, SpaceTimeVec, WindowProblem};

/// Splitting iteration for one implicit step, started from `U₀ = u^t`:
/// `(I + h G(a L + b c I)) U_{k+1} = u^t - b h G(f(U_k) - c U_k)`.
pub fn fixed_point_solve(
    model: &RDModel,
    u_t: &Field,
    h_t: f64,
    tol: f64,
    max_iter: usize,
) -> Result<StepOutcome> {
    let prob = WindowProblem::new(model, u_t.clone(), 1, h_t)?;
    let c = model.reaction.c;
    let solver = ShiftedSolve::new(
        model,
        h_t,
        model.b * c,
        inner_params(KrylovParams::default(), tol, h_t),
    )?;
    let m = u_t.values().len();
    let mut u = SpaceTimeVec::replicate(u_t, 1);
    let mut history = vec![residual_inf(&prob, &u)?];
    let mut rem = vec![0.0; m];
    let mut grem = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let bh = model.b * h_t;
    for it in 1..=max_iter {
        if *history.last().unwrap() < tol {
            return finish(u, it - 1, history);
        }
        model.reaction_into(u.block(0), &mut rem);
        for (r, &v) in rem.iter_mut().zip(u.block(0)) {
            *r -= c * v;
        }
        model.g_op.apply_into(&rem, &mut grem);
        for ((r, &ut), g) in rhs.iter_mut().zip(u_t.values()).zip(&grem) {
            *r = ut - bh * g;
        }
        solver.solve(&rhs, u.block_mut(0))?;
        let res = residual_inf(&prob, &u)?;
        if !res.is_finite() {
            return Err(Error::Divergence { iterations: it });
        }
        history.push(res);
    }
    if *history.last().unwrap() < tol {
        return finish(u, max_iter, history);
    }
    Err(Error::NotConverged {
        solver: "fixed_point",
        iterations: max_iter,
        residual: *history.last().unwrap(),
    })
}

fn finish(u: SpaceTimeVec, iterations: usize, residual_history: Vec<f64>) -> Result<StepOutcome> {
    Ok(StepOutcome {
        u: u.last_block(),
        iterations,
        residual_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equations::{build_model, initial_condition, ModelKind, ModelParams};

    #[test]
    fn equilibrium_returns_immediately() {
        let m = build_model(ModelKind::AllenCahn, ModelParams::new(0.1, 8)).unwrap();
        let out = fixed_point_solve(&m, &Field::constant(8, 1.0), 0.01, 1e-10, 10).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.u.values().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn linear_reaction_solves_in_one_iteration() {
        let mut m = build_model(ModelKind::CahnHilliard, ModelParams::new(0.1, 16)).unwrap();
        m.reaction.f = |u| 2.0 * u;
        m.reaction.c = 2.0;
        let u0 = initial_condition(ModelKind::CahnHilliard, &m.grid);
        let out = fixed_point_solve(&m, &u0, 0.01, 1e-10, 5).unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn converges_on_allen_cahn() {
        let m = build_model(ModelKind::AllenCahn, ModelParams::new(0.1, 32)).unwrap();
        let u0 = initial_condition(ModelKind::AllenCahn, &m.grid);
        let out = fixed_point_solve(&m, &u0, 0.005, 1e-8, 500).unwrap();
        assert!(out.residual_history.last().unwrap() < &1e-8);
        for w in out.residual_history.windows(2).skip(1) {
            assert!(w[1] <= w[0] * 1.0001);
        }
    }

    #[test]
    fn varcoeff_uses_inner_krylov() {
        let m = build_model(ModelKind::VarCoeff, ModelParams::new(0.1, 16)).unwrap();
        let u0 = initial_condition(ModelKind::VarCoeff, &m.grid);
        let out = fixed_point_solve(&m, &u0, 0.002, 1e-8, 500).unwrap();
        assert!(out.residual_history.last().unwrap() < &1e-8);
    }
}
