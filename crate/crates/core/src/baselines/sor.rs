use super::StepOutcome;
use crate::equations::{OperatorClass, RDModel};
use crate::error::{Error, Result};
use crate::spectral::Field;
use crate::system::{residual_inf, SpaceTimeVec, WindowProblem};

const NODE_TOL: f64 = 1e-10;
const NODE_MAX_ITER: usize = 50;

/// Nonlinear SOR for one implicit step of an Allen–Cahn-type model.
///
/// Nodes are visited in lexicographic order. Each node's scalar equation
/// is solved by Newton from its current value, then relaxed with
/// `omega_sor`.
pub fn nonlinear_sor_solve(
    model: &RDModel,
    u_t: &Field,
    h_t: f64,
    omega_sor: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<StepOutcome> {
    if !(omega_sor > 0.0 && omega_sor < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "omega_sor must lie in (0, 2), got {omega_sor}"
        )));
    }
    if model.operator_class() != OperatorClass::AllenCahnType {
        return Err(Error::Unsupported("nonlinear SOR needs G = I".into()));
    }
    let stencil = model
        .diffusion_stencil()
        .ok_or_else(|| Error::Unsupported("nonlinear SOR needs a 5-point stencil".into()))?;
    let prob = WindowProblem::new(model, u_t.clone(), 1, h_t)?;
    let n = stencil.n();
    let (f, fp) = (model.reaction.f, model.reaction.f_prime);
    let ha = h_t * model.a / (stencil.h() * stencil.h());
    let hb = h_t * model.b;
    let u0 = u_t.values();

    let mut u = SpaceTimeVec::replicate(u_t, 1);
    let mut history = vec![residual_inf(&prob, &u)?];
    let mut sweeps = 0;
    while *history.last().unwrap() >= tol {
        if sweeps == max_sweeps {
            return Err(Error::NotConverged {
                solver: "nonlinear_sor",
                iterations: sweeps,
                residual: *history.last().unwrap(),
            });
        }
        sweeps += 1;
        let v = u.block_mut(0);
        for i in 0..n {
            let (ip, im) = ((i + 1) % n, (i + n - 1) % n);
            for j in 0..n {
                let (jp, jm) = ((j + 1) % n, (j + n - 1) % n);
                let (sxp, sxm) = (stencil.sigma_x(i, j), stencil.sigma_x(im, j));
                let (syp, sym) = (stencil.sigma_y(i, j), stencil.sigma_y(i, jm));
                let diag = ha * (sxp + sxm + syp + sym);
                let off = ha
                    * (sxp * v[ip * n + j]
                        + sxm * v[im * n + j]
                        + syp * v[i * n + jp]
                        + sym * v[i * n + jm]);
                let k = i * n + j;
                let old = v[k];
                let mut x = old;
                let mut converged = false;
                for _ in 0..NODE_MAX_ITER {
                    let g = x - u0[k] + diag * x - off + hb * f(x);
                    let dg = 1.0 + diag + hb * fp(x);
                    let step = g / dg;
                    x -= step;
                    if !x.is_finite() {
                        break;
                    }
                    if step.abs() <= NODE_TOL {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(Error::NotConverged {
                        solver: "nonlinear_sor node newton",
                        iterations: NODE_MAX_ITER,
                        residual: x,
                    });
                }
                v[k] = (1.0 - omega_sor) * old + omega_sor * x;
            }
        }
        history.push(residual_inf(&prob, &u)?);
    }
    Ok(StepOutcome {
        u: u.last_block(),
        iterations: sweeps,
        residual_history: history,
    })
}
