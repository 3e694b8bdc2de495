use super::{inner_params, pcg_solve, KrylovParams, StepOutcome};
use crate::equations::{OperatorClass, RDModel};
use crate::error::{Error, Result};
use crate::precond::Precond;
use crate::spectral::Field;
use crate::system::{apply_DF, apply_DF_transpose, eval_F, SpaceTimeVec, WindowProblem};

pub const NEWTON_MAX_ITER: usize = 50;

/// Newton's method on one implicit step with PCG inner solves.
///
/// The Jacobian `J = I + h G(a L + b f'(U))` is symmetric when `G = I`; it
/// is then solved directly with the `X⁻¹` block preconditioner. Otherwise
/// PCG runs on `Jᵀ J s = -Jᵀ r` preconditioned with `X⁻²`.
pub fn newton_solve(
    model: &RDModel,
    u_t: &Field,
    h_t: f64,
    kp: KrylovParams,
    tol: f64,
    max_iter: usize,
) -> Result<StepOutcome> {
    let kp = inner_params(kp, tol, h_t);
    let prob = WindowProblem::new(model, u_t.clone(), 1, h_t)?;
    let pc = Precond::new(model, 1, h_t)?;
    let x_inv = pc.x_symbol().map(|x| 1.0 / x)?;
    let x_inv2 = pc.x_symbol().map(|x| 1.0 / (x * x))?;
    let symmetric = model.operator_class() == OperatorClass::AllenCahnType;
    let n = u_t.n();

    let mut u = SpaceTimeVec::replicate(u_t, 1);
    let mut r = eval_F(&prob, &u)?;
    let mut history = vec![r.max_abs() / h_t];
    let mut it = 0;
    while *history.last().unwrap() >= tol {
        if it == max_iter {
            return Err(Error::NotConverged {
                solver: "newton",
                iterations: it,
                residual: *history.last().unwrap(),
            });
        }
        it += 1;
        let wrap = |x: &[f64]| SpaceTimeVec::from_vec(n, 1, x.to_vec()).expect("block length");
        let jac = |x: &[f64], y: &mut [f64]| {
            let jx = apply_DF(&prob, &u, &wrap(x)).expect("shape checked");
            if symmetric {
                y.copy_from_slice(jx.data());
            } else {
                let jtjx = apply_DF_transpose(&prob, &u, &jx).expect("shape checked");
                y.copy_from_slice(jtjx.data());
            }
        };
        let mut rhs = if symmetric {
            r.clone()
        } else {
            apply_DF_transpose(&prob, &u, &r)?
        };
        rhs.scale(-1.0);
        let step = if symmetric {
            pcg_solve(jac, |x, y| x_inv.apply_into(x, y), rhs.data(), None, kp)?
        } else {
            pcg_solve(jac, |x, y| x_inv2.apply_into(x, y), rhs.data(), None, kp)?
        };
        u.axpy(1.0, &wrap(&step.x));
        r = eval_F(&prob, &u)?;
        let res = r.max_abs() / h_t;
        if !res.is_finite() {
            return Err(Error::Divergence { iterations: it });
        }
        history.push(res);
    }
    Ok(StepOutcome {
        u: u.last_block(),
        iterations: it,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::fixed_point_solve;
    use crate::equations::{build_model, initial_condition, ModelKind, ModelParams};

    fn max_dist(a: &Field, b: &Field) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn equilibrium_needs_no_iteration() {
        let m = build_model(ModelKind::AllenCahn, ModelParams::new(0.1, 8)).unwrap();
        let out = newton_solve(
            &m,
            &Field::constant(8, 1.0),
            0.01,
            KrylovParams::default(),
            1e-8,
            50,
        )
        .unwrap();
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn quadratic_convergence_on_allen_cahn() {
        let m = build_model(ModelKind::AllenCahn, ModelParams::new(0.1, 32)).unwrap();
        let u0 = initial_condition(ModelKind::AllenCahn, &m.grid);
        let out = newton_solve(&m, &u0, 0.005, KrylovParams::default(), 1e-7, 50).unwrap();
        let r = &out.residual_history;
        assert!(out.iterations <= 8, "{r:?}");
        // Once in the basin, r_{k+1} / r_k² stays bounded.
        let tail: Vec<f64> = r
            .windows(2)
            .filter(|w| w[0] < 1.0)
            .map(|w| w[1] / (w[0] * w[0]))
            .collect();
        assert!(!tail.is_empty(), "{r:?}");
        assert!(tail.iter().all(|&c| c < 10.0), "{r:?}");
    }

    #[test]
    fn cahn_hilliard_via_normal_equations() {
        let m = build_model(ModelKind::CahnHilliard, ModelParams::new(0.1, 32)).unwrap();
        let u0 = initial_condition(ModelKind::CahnHilliard, &m.grid);
        let h = 5e-4;
        let newton = newton_solve(&m, &u0, h, KrylovParams::default(), 1e-8, 50).unwrap();
        let fp = fixed_point_solve(&m, &u0, h, 1e-10, 5000).unwrap();
        assert!(max_dist(&newton.u, &fp.u) < 1e-6);
    }

    #[test]
    fn varcoeff_stencil_jacobian() {
        let m = build_model(ModelKind::VarCoeff, ModelParams::new(0.1, 16)).unwrap();
        let u0 = initial_condition(ModelKind::VarCoeff, &m.grid);
        let newton = newton_solve(&m, &u0, 0.002, KrylovParams::default(), 1e-8, 50).unwrap();
        let fp = fixed_point_solve(&m, &u0, 0.002, 1e-10, 5000).unwrap();
        assert!(max_dist(&newton.u, &fp.u) < 1e-7);
    }
}
