//! Preconditioned PDHG for `F(U) = 0`:
//!
//! ```text
//! Q⁺ = (Q + τ_P M⁻¹F(U)) / (1 + ε τ_P)
//! Q̃  = Q⁺ + ω (Q⁺ - Q)
//! U⁺ = U - τ_U DF(U)ᵀ M⁻ᵀ Q̃
//! ```
//!
//! With `preconditioned = false` the same recursion runs with `M = I`.

use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::precond::Precond;
use crate::system::{apply_DF_transpose, eval_F, SpaceTimeVec, WindowProblem};

/// Iterates whose scaled residual exceeds this are treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdhgParams {
    pub tau_u: f64,
    pub tau_p: f64,
    pub omega: f64,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub preconditioned: bool,
}

impl Default for PdhgParams {
    fn default() -> Self {
        Self {
            tau_u: 0.5,
            tau_p: 0.5,
            omega: 1.0,
            epsilon: 0.1,
            tol: 1e-6,
            max_iter: 10_000,
            preconditioned: true,
        }
    }
}

impl PdhgParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("tau_u", self.tau_u)?;
        positive("tau_p", self.tau_p)?;
        positive("epsilon", self.epsilon)?;
        positive("tol", self.tol)?;
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "omega must be >= 0, got {}",
                self.omega
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "max_iter must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdhgState {
    pub u: SpaceTimeVec,
    pub q: SpaceTimeVec,
    pub iter: usize,
}

impl PdhgState {
    /// `(U, 0)`.
    pub fn new(u: SpaceTimeVec) -> Self {
        let q = SpaceTimeVec::zeros(u.n(), u.n_t());
        Self { u, q, iter: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// `(‖Res‖∞, ‖F̂‖₂)` for every iterate including the initial one.
    pub residual_history: Vec<(f64, f64)>,
    pub converged: bool,
    pub diverged: bool,
    pub wall_time: f64,
}

impl SolveStats {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().map_or(f64::NAN, |r| r.0)
    }

    pub fn fhat_history(&self) -> Vec<f64> {
        self.residual_history.iter().map(|r| r.1).collect()
    }

    /// CSV with columns `iter,res_inf,fhat_l2,rate`; the rate column is empty
    /// on the first row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iter", "res_inf", "fhat_l2", "rate"])?;
        let mut prev: Option<f64> = None;
        for (k, &(res, fhat)) in self.residual_history.iter().enumerate() {
            let rate = prev
                .map(|p| format_f64(-(fhat / p).log10()))
                .unwrap_or_default();
            out.write_record([k.to_string(), format_f64(res), format_f64(fhat), rate])?;
            prev = Some(fhat);
        }
        out.flush()?;
        Ok(())
    }
}

/// Shortest representation that round-trips, i.e. full `f64` precision.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// `M⁻¹ v` or `v`, depending on whether preconditioning is on.
fn precondition(pc: &Precond, v: SpaceTimeVec, on: bool) -> Result<SpaceTimeVec> {
    if on {
        pc.apply_m_inverse(&v)
    } else {
        Ok(v)
    }
}

fn precondition_t(pc: &Precond, v: SpaceTimeVec, on: bool) -> Result<SpaceTimeVec> {
    if on {
        pc.apply_m_inverse_transpose(&v)
    } else {
        Ok(v)
    }
}

/// Dual update, extrapolation and primal update given `F̂(U_k)`.
fn advance(
    prob: &WindowProblem<'_>,
    pc: &Precond,
    state: &PdhgState,
    fhat: &SpaceTimeVec,
    params: &PdhgParams,
) -> Result<PdhgState> {
    let shrink = 1.0 / (1.0 + params.epsilon * params.tau_p);
    let mut q_next = state.q.clone();
    q_next.axpy(params.tau_p, fhat);
    q_next.scale(shrink);

    let mut q_bar = q_next.clone();
    q_bar.scale(1.0 + params.omega);
    q_bar.axpy(-params.omega, &state.q);

    let dual = precondition_t(pc, q_bar, params.preconditioned)?;
    let grad = apply_DF_transpose(prob, &state.u, &dual)?;
    let mut u_next = state.u.clone();
    u_next.axpy(-params.tau_u, &grad);

    if !(u_next.is_finite() && q_next.is_finite()) {
        return Err(Error::Divergence {
            iterations: state.iter + 1,
        });
    }
    Ok(PdhgState {
        u: u_next,
        q: q_next,
        iter: state.iter + 1,
    })
}

/// One PDHG iteration.
pub fn pdhg_step(
    prob: &WindowProblem<'_>,
    pc: &Precond,
    state: &PdhgState,
    params: &PdhgParams,
) -> Result<PdhgState> {
    let f = eval_F(prob, &state.u)?;
    let fhat = precondition(pc, f, params.preconditioned)?;
    advance(prob, pc, state, &fhat, params)
}

/// Iterates until `‖F(U)‖∞ / h_t < tol`, `max_iter`, or divergence.
/// Divergence is reported through the stats, not as an error.
pub fn solve_window(
    prob: &WindowProblem<'_>,
    pc: &Precond,
    params: &PdhgParams,
    u_init: SpaceTimeVec,
    q_init: SpaceTimeVec,
) -> Result<(SpaceTimeVec, SolveStats)> {
    params.validate()?;
    u_init.check_shape(prob.n(), prob.n_t)?;
    q_init.check_shape(prob.n(), prob.n_t)?;
    let start = Instant::now();
    let mut stats = SolveStats::default();
    let mut state = PdhgState {
        u: u_init,
        q: q_init,
        iter: 0,
    };

    loop {
        let f = eval_F(prob, &state.u)?;
        let res = f.max_abs() / prob.h_t;
        let fhat = precondition(pc, f, params.preconditioned)?;
        stats.residual_history.push((res, fhat.norm2()));
        if !res.is_finite() || res > DIVERGENCE_LIMIT {
            stats.diverged = true;
            break;
        }
        if res < params.tol {
            stats.converged = true;
            break;
        }
        if state.iter >= params.max_iter {
            break;
        }
        match advance(prob, pc, &state, &fhat, params) {
            Ok(next) => state = next,
            Err(Error::Divergence { .. }) => {
                stats.diverged = true;
                stats.iterations = state.iter + 1;
                stats.residual_history.push((f64::INFINITY, f64::INFINITY));
                stats.wall_time = start.elapsed().as_secs_f64();
                return Ok((state.u, stats));
            }
            Err(e) => return Err(e),
        }
    }
    stats.iterations = state.iter;
    stats.wall_time = start.elapsed().as_secs_f64();
    log::debug!(
        "pdhg: {} iterations, residual {:e}, converged = {}",
        stats.iterations,
        stats.final_residual(),
        stats.converged
    );
    Ok((state.u, stats))
}

/// State of the G-prox form, where the dual variable `P` satisfies `Q = Mᵀ P`.
#[derive(Clone, Debug, PartialEq)]
pub struct GproxState {
    pub u: SpaceTimeVec,
    pub p: SpaceTimeVec,
    pub iter: usize,
}

/// One step of the G-prox recursion with `G = M Mᵀ`:
/// `P⁺ = (P + τ_P M⁻ᵀM⁻¹F(U)) / (1 + ε τ_P)`, `U⁺ = U - τ_U DF(U)ᵀ P̃`.
pub fn gprox_step(
    prob: &WindowProblem<'_>,
    pc: &Precond,
    state: &GproxState,
    params: &PdhgParams,
) -> Result<GproxState> {
    let f = eval_F(prob, &state.u)?;
    let fhat = precondition(pc, f, params.preconditioned)?;
    let g_inv_f = precondition_t(pc, fhat, params.preconditioned)?;

    let mut p_next = state.p.clone();
    p_next.axpy(params.tau_p, &g_inv_f);
    p_next.scale(1.0 / (1.0 + params.epsilon * params.tau_p));
    let mut p_bar = p_next.clone();
    p_bar.scale(1.0 + params.omega);
    p_bar.axpy(-params.omega, &state.p);

    let grad = apply_DF_transpose(prob, &state.u, &p_bar)?;
    let mut u_next = state.u.clone();
    u_next.axpy(-params.tau_u, &grad);
    if !(u_next.is_finite() && p_next.is_finite()) {
        return Err(Error::Divergence {
            iterations: state.iter + 1,
        });
    }
    Ok(GproxState {
        u: u_next,
        p: p_next,
        iter: state.iter + 1,
    })
}

/// Iterations averaged by [`rate_series`] when no prefix is given.
pub const DEFAULT_RATE_PREFIX: usize = 500;

/// Per-step rates `r_k = -log10(h_{k+1} / h_k)` and their mean over the
/// first `prefix` steps (default 500, or all if fewer).
pub fn rate_series(history: &[f64], prefix: Option<usize>) -> Result<(Vec<f64>, f64)> {
    if history.len() < 2 {
        return Err(Error::InvalidParameter(
            "rate needs at least two history entries".into(),
        ));
    }
    if let Some(bad) = history.iter().find(|&&h| !(h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "history norms must be positive and finite, found {bad}"
        )));
    }
    let rates: Vec<f64> = history.windows(2).map(|w| -(w[1] / w[0]).log10()).collect();
    let take = prefix.unwrap_or(DEFAULT_RATE_PREFIX).clamp(1, rates.len());
    let mean = rates[..take].iter().sum::<f64>() / take as f64;
    Ok((rates, mean))
}
