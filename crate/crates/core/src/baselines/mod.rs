//! Classical solvers for the same implicit steps, used as references and
//! for timing comparisons.

mod fixed_point;
mod imex;
mod newton;
mod pcg;
mod sor;

pub use fixed_point::fixed_point_solve;
pub use imex::imex_step;
pub use newton::{newton_solve, NEWTON_MAX_ITER};
pub use pcg::{pcg_solve, KrylovParams, PcgOutcome};
pub use sor::nonlinear_sor_solve;

use crate::equations::{LinearOp, RDModel};
use crate::error::{Error, Result};
use crate::spectral::SpectralDiag;

/// Outcome of an iterative single-step solver.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub u: crate::spectral::Field,
    pub iterations: usize,
    /// `‖Res‖∞` after each iteration, starting with the initial guess.
    pub residual_history: Vec<f64>,
}

/// Solver for `(I + h G(a L + s I)) x = rhs` with a fixed shift `s`.
pub(crate) enum ShiftedSolve<'a> {
    Spectral(SpectralDiag),
    /// `G = I` with a stencil `L`: PCG with the spectral surrogate.
    Krylov {
        model: &'a RDModel,
        h: f64,
        shift: f64,
        precond: SpectralDiag,
        kp: KrylovParams,
    },
}

/// Inner tolerance fine enough that `‖F‖∞ / h_t` can still reach `tol`.
pub(crate) fn inner_params(kp: KrylovParams, tol: f64, h_t: f64) -> KrylovParams {
    KrylovParams {
        eta: kp.eta.min(0.1 * tol * h_t),
        ..kp
    }
}

impl<'a> ShiftedSolve<'a> {
    pub(crate) fn new(model: &'a RDModel, h: f64, shift: f64, kp: KrylovParams) -> Result<Self> {
        let a = model.a;
        let g = model.g_symbol()?;
        match &model.l_op {
            LinearOp::Spectral(l) => {
                Ok(ShiftedSolve::Spectral(g.zip_with(l, |g, l| {
                    1.0 / (1.0 + h * g * (a * l + shift))
                })?))
            }
            LinearOp::Stencil(_) if g.is_identity() => {
                let precond = model.l_precond.map(|l| 1.0 / (1.0 + h * (a * l + shift)))?;
                Ok(ShiftedSolve::Krylov {
                    model,
                    h,
                    shift,
                    precond,
                    kp,
                })
            }
            LinearOp::Stencil(_) => Err(Error::Unsupported(
                "stencil diffusion is only supported with G = I".into(),
            )),
        }
    }

    pub(crate) fn solve(&self, rhs: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            ShiftedSolve::Spectral(inv) => {
                inv.apply_into(rhs, out);
                Ok(())
            }
            ShiftedSolve::Krylov {
                model,
                h,
                shift,
                precond,
                kp,
            } => {
                let scale = 1.0 + h * shift;
                let ha = h * model.a;
                let apply_a = |x: &[f64], y: &mut [f64]| {
                    model.l_op.apply_into(x, y);
                    for (yi, xi) in y.iter_mut().zip(x) {
                        *yi = scale * xi + ha * *yi;
                    }
                };
                let apply_p = |x: &[f64], y: &mut [f64]| precond.apply_into(x, y);
                let sol = pcg_solve(apply_a, apply_p, rhs, Some(rhs), *kp)?;
                out.copy_from_slice(&sol.x);
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equations::{build_model, initial_condition, ModelKind, ModelParams};
    use crate::precond::Precond;
    use crate::system::{apply_DF, eval_F, SpaceTimeVec, WindowProblem};

    fn jacobian_pcg_iterations(n: usize) -> usize {
        let m = build_model(ModelKind::AllenCahn, ModelParams::new(0.01, n)).unwrap();
        let u0 = initial_condition(ModelKind::AllenCahn, &m.grid);
        let h = 1e-3;
        let prob = WindowProblem::new(&m, u0.clone(), 1, h).unwrap();
        let u = SpaceTimeVec::replicate(&u0, 1);
        let x_inv = Precond::new(&m, 1, h)
            .unwrap()
            .x_symbol()
            .map(|x| 1.0 / x)
            .unwrap();
        let mut rhs = eval_F(&prob, &u).unwrap();
        rhs.scale(-1.0);
        let out = pcg_solve(
            |x, y| {
                let w = SpaceTimeVec::from_vec(n, 1, x.to_vec()).unwrap();
                y.copy_from_slice(apply_DF(&prob, &u, &w).unwrap().data());
            },
            |x, y| x_inv.apply_into(x, y),
            rhs.data(),
            None,
            KrylovParams::default(),
        )
        .unwrap();
        out.iterations
    }

    #[test]
    fn pcg_iterations_independent_of_grid() {
        let its: Vec<usize> = [32, 64, 128]
            .into_iter()
            .map(jacobian_pcg_iterations)
            .collect();
        let lo = *its.iter().min().unwrap();
        let hi = *its.iter().max().unwrap();
        assert!(hi - lo <= 3, "{its:?}");
    }

    #[test]
    fn stencil_with_nontrivial_g_is_rejected() {
        let mut m = build_model(ModelKind::VarCoeff, ModelParams::new(0.1, 8)).unwrap();
        m.g_op = LinearOp::Spectral(m.l_precond.clone());
        assert!(matches!(
            ShiftedSolve::new(&m, 0.01, 0.0, KrylovParams::default()),
            Err(Error::Unsupported(_))
        ));
    }
}
