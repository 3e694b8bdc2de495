//! Multi-window time marching, adaptive step control and physical
//! diagnostics.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::baselines::{
    fixed_point_solve, imex_step, newton_solve, nonlinear_sor_solve, KrylovParams, StepOutcome,
    NEWTON_MAX_ITER,
};
use crate::equations::RDModel;
use crate::error::{Error, Result};
use crate::pdhg::{format_f64, solve_window, PdhgParams};
use crate::precond::Precond;
use crate::spectral::{Field, Grid2D};
use crate::system::{SpaceTimeVec, WindowProblem};

/// Smallest step the adaptive controller will try.
pub const MIN_STEP: f64 = 1e-12;
/// Default iteration count below which a window counts as fast.
pub const DEFAULT_FAST_ITERS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Pdhg,
    Imex,
    FixedPoint,
    NlSor,
    Newton,
}

impl SolverKind {
    pub const ALL: [SolverKind; 5] = [
        SolverKind::Pdhg,
        SolverKind::Imex,
        SolverKind::FixedPoint,
        SolverKind::NlSor,
        SolverKind::Newton,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Pdhg => "pdhg",
            SolverKind::Imex => "imex",
            SolverKind::FixedPoint => "fixed_point",
            SolverKind::NlSor => "nl_sor",
            SolverKind::Newton => "newton",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown solver '{s}'")))
    }
}

/// Step-size controller: grow by 10% after fast windows, halve otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveRule {
    pub ht_cap: f64,
    pub fast_iter_threshold: usize,
}

impl AdaptiveRule {
    pub fn new(ht_cap: f64) -> Self {
        Self {
            ht_cap,
            fast_iter_threshold: DEFAULT_FAST_ITERS,
        }
    }

    /// What to do after a window solved with step `h`.
    pub fn decide(&self, h: f64, converged: bool, iterations: usize) -> StepDecision {
        if !converged {
            StepDecision::Retry { next_h: 0.5 * h }
        } else if iterations < self.fast_iter_threshold {
            StepDecision::Accept {
                next_h: (1.1 * h).min(self.ht_cap),
            }
        } else {
            StepDecision::Accept { next_h: 0.5 * h }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepDecision {
    Accept { next_h: f64 },
    Retry { next_h: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarchPlan {
    pub windows: usize,
    pub n_t: usize,
    pub h_t: f64,
    pub solver: SolverKind,
    pub adaptive: Option<AdaptiveRule>,
    /// Only used by adaptive marching; fixed plans end at `windows · n_t · h_t`.
    pub t_end: Option<f64>,
    pub snapshot_times: Vec<f64>,
}

impl MarchPlan {
    pub fn fixed(windows: usize, n_t: usize, h_t: f64, solver: SolverKind) -> Self {
        Self {
            windows,
            n_t,
            h_t,
            solver,
            adaptive: None,
            t_end: None,
            snapshot_times: Vec::new(),
        }
    }

    pub fn total_time(&self) -> f64 {
        self.t_end
            .unwrap_or(self.windows as f64 * self.n_t as f64 * self.h_t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows == 0 || self.n_t == 0 {
            return Err(Error::InvalidParameter(
                "windows and n_t must be at least 1".into(),
            ));
        }
        if !(self.h_t.is_finite() && self.h_t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "h_t must be positive, got {}",
                self.h_t
            )));
        }
        if let Some(rule) = &self.adaptive {
            if !(rule.ht_cap >= self.h_t) {
                return Err(Error::InvalidParameter(format!(
                    "ht_cap ({}) must be at least the initial h_t ({})",
                    rule.ht_cap, self.h_t
                )));
            }
            match self.t_end {
                Some(t) if t.is_finite() && t > 0.0 => {}
                _ => {
                    return Err(Error::InvalidParameter(
                        "adaptive marching needs a positive t_end".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

/// Settings shared by every solver kind. `pdhg.tol` and `pdhg.max_iter`
/// also bound the iterative baselines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub pdhg: PdhgParams,
    pub krylov: KrylovParams,
    pub omega_sor: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            pdhg: PdhgParams::default(),
            krylov: KrylovParams::default(),
            omega_sor: 1.0,
        }
    }
}

/// Result of one window attempt.
#[derive(Clone, Debug)]
pub struct WindowOutcome {
    /// All `n_t` time slices of the window.
    pub u: SpaceTimeVec,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: f64,
}

/// Anything that can advance a window; lets the step controller be driven
/// by a stub in tests.
pub trait WindowSolver {
    fn solve(&mut self, u0: &Field, n_t: usize, h_t: f64) -> Result<WindowOutcome>;
}

/// Solves windows of a concrete model with one of the built-in solvers.
pub struct ModelSolver<'a> {
    pub model: &'a RDModel,
    pub kind: SolverKind,
    pub settings: SolverSettings,
}

impl<'a> ModelSolver<'a> {
    pub fn new(model: &'a RDModel, kind: SolverKind, settings: SolverSettings) -> Self {
        Self {
            model,
            kind,
            settings,
        }
    }

    fn single_step(&self, u: &Field, h: f64) -> Result<StepOutcome> {
        let s = &self.settings;
        let (tol, max_iter) = (s.pdhg.tol, s.pdhg.max_iter);
        match self.kind {
            SolverKind::Imex => Ok(StepOutcome {
                u: imex_step(self.model, u, h, s.krylov)?,
                iterations: 1,
                residual_history: Vec::new(),
            }),
            SolverKind::FixedPoint => fixed_point_solve(self.model, u, h, tol, max_iter),
            SolverKind::NlSor => nonlinear_sor_solve(self.model, u, h, s.omega_sor, tol, max_iter),
            SolverKind::Newton => newton_solve(
                self.model,
                u,
                h,
                s.krylov,
                tol,
                max_iter.min(NEWTON_MAX_ITER),
            ),
            SolverKind::Pdhg => unreachable!("handled per window"),
        }
    }
}

/// Failures that a smaller step may cure; everything else propagates.
fn is_recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::NotConverged { .. } | Error::Divergence { .. } | Error::Breakdown { .. }
    )
}

impl WindowSolver for ModelSolver<'_> {
    fn solve(&mut self, u0: &Field, n_t: usize, h_t: f64) -> Result<WindowOutcome> {
        let start = Instant::now();
        if self.kind == SolverKind::Pdhg {
            let prob = WindowProblem::new(self.model, u0.clone(), n_t, h_t)?;
            let pc = Precond::for_problem(&prob)?;
            let init = SpaceTimeVec::replicate(u0, n_t);
            let (u, stats) = solve_window(&prob, &pc, &self.settings.pdhg, init, prob.zeros())?;
            return Ok(WindowOutcome {
                u,
                iterations: stats.iterations,
                converged: stats.converged,
                wall_time: start.elapsed().as_secs_f64(),
            });
        }
        let mut slices = Vec::with_capacity(n_t);
        let mut iterations = 0;
        let mut current = u0.clone();
        let mut converged = true;
        for _ in 0..n_t {
            match self.single_step(&current, h_t) {
                Ok(step) => {
                    iterations += step.iterations;
                    current = step.u;
                    slices.push(current.clone());
                }
                Err(e) if is_recoverable(&e) => {
                    log::debug!("{} step failed: {e}", self.kind);
                    converged = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        slices.resize(n_t, current);
        Ok(WindowOutcome {
            u: SpaceTimeVec::from_blocks(&slices)?,
            iterations,
            converged,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }
}

/// Per-attempt record; rejected adaptive attempts are kept with
/// `accepted = false`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowStats {
    pub window: usize,
    pub t_start: f64,
    pub h_t: f64,
    pub n_t: usize,
    pub iterations: usize,
    pub converged: bool,
    pub accepted: bool,
    pub wall_time: f64,
    /// Free energy of the window's last slice.
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub requested: f64,
    pub t: f64,
    pub u: Field,
}

#[derive(Debug)]
pub struct MarchResult {
    pub snapshots: Vec<Snapshot>,
    pub stats: Vec<WindowStats>,
    /// `(t, E(u(t)))` for every accepted slice, starting at `t = 0`.
    pub energy_trace: Vec<(f64, f64)>,
    /// Accepted step sizes, one per accepted window.
    pub ht_schedule: Vec<f64>,
    pub final_u: Field,
    pub t_final: f64,
    /// Set when a window failed; everything above covers the work done before it.
    pub aborted: Option<Error>,
}

impl MarchResult {
    pub fn mean_accepted_ht(&self) -> Option<f64> {
        (!self.ht_schedule.is_empty())
            .then(|| self.ht_schedule.iter().sum::<f64>() / self.ht_schedule.len() as f64)
    }

    pub fn write_stats_csv<W: Write>(&self, w: W) -> Result<()> {
        write_window_stats(&self.stats, w)
    }
}

/// CSV with columns `window,h_t,iterations,converged,wall_time,energy`.
pub fn write_window_stats<W: Write>(stats: &[WindowStats], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "window",
        "h_t",
        "iterations",
        "converged",
        "wall_time",
        "energy",
    ])?;
    for s in stats {
        out.write_record([
            s.window.to_string(),
            format_f64(s.h_t),
            s.iterations.to_string(),
            s.converged.to_string(),
            format_f64(s.wall_time),
            format_f64(s.energy),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Tracks, for every requested time, the closest completed slice.
struct SnapshotPicker {
    best: Vec<Option<Snapshot>>,
    times: Vec<f64>,
}

impl SnapshotPicker {
    fn new(times: &[f64]) -> Self {
        Self {
            best: vec![None; times.len()],
            times: times.to_vec(),
        }
    }

    fn offer(&mut self, t: f64, u: &Field) {
        for (slot, &want) in self.best.iter_mut().zip(&self.times) {
            let closer = slot
                .as_ref()
                .map_or(true, |s| (t - want).abs() < (s.t - want).abs());
            if closer {
                *slot = Some(Snapshot {
                    requested: want,
                    t,
                    u: u.clone(),
                });
            }
        }
    }

    fn finish(self) -> Vec<Snapshot> {
        self.best.into_iter().flatten().collect()
    }
}

/// Marches `plan` from `u0` with the built-in solvers.
pub fn march(
    model: &RDModel,
    u0: &Field,
    plan: &MarchPlan,
    settings: &SolverSettings,
) -> Result<MarchResult> {
    let mut solver = ModelSolver::new(model, plan.solver, *settings);
    march_with(model, &mut solver, u0, plan)
}

/// Marches with any [`WindowSolver`]. With an adaptive rule, windows are
/// repeated until `t_end` is reached; otherwise exactly `plan.windows`.
pub fn march_with(
    model: &RDModel,
    solver: &mut dyn WindowSolver,
    u0: &Field,
    plan: &MarchPlan,
) -> Result<MarchResult> {
    plan.validate()?;
    u0.check_n(model.grid.n())?;
    let mut picker = SnapshotPicker::new(&plan.snapshot_times);
    picker.offer(0.0, u0);
    let mut result = MarchResult {
        snapshots: Vec::new(),
        stats: Vec::new(),
        energy_trace: vec![(0.0, free_energy(model, u0))],
        ht_schedule: Vec::new(),
        final_u: u0.clone(),
        t_final: 0.0,
        aborted: None,
    };
    let mut h = plan.h_t;
    let mut window = 0;
    let t_end = plan.total_time();
    let slack = 1e-12 * t_end.max(1.0);
    let more = |window: usize, t: f64| match plan.adaptive {
        Some(_) => t_end - t > slack,
        None => window < plan.windows,
    };
    while more(window, result.t_final) {
        // Adaptive runs shorten the final window to land on t_end.
        let remaining = (t_end - result.t_final) / plan.n_t as f64;
        let lands = plan.adaptive.is_some() && h >= remaining;
        if lands {
            h = remaining;
        }
        if h < MIN_STEP {
            result.aborted = Some(Error::StepUnderflow(h));
            break;
        }
        let out = match solver.solve(&result.final_u, plan.n_t, h) {
            Ok(out) => out,
            Err(e) => {
                result.aborted = Some(e);
                break;
            }
        };
        let last = out.u.last_block();
        let mut stats = WindowStats {
            window,
            t_start: result.t_final,
            h_t: h,
            n_t: plan.n_t,
            iterations: out.iterations,
            converged: out.converged,
            accepted: out.converged,
            wall_time: out.wall_time,
            energy: free_energy(model, &last),
        };
        let next_h = match plan.adaptive {
            Some(rule) => match rule.decide(h, out.converged, out.iterations) {
                StepDecision::Accept { next_h } => next_h,
                StepDecision::Retry { next_h } => {
                    log::info!("window {window} failed at h_t = {h:e}; retrying with {next_h:e}");
                    result.stats.push(stats);
                    h = next_h;
                    continue;
                }
            },
            None if !out.converged => {
                stats.accepted = false;
                result.stats.push(stats);
                result.aborted = Some(Error::NotConverged {
                    solver: "window",
                    iterations: out.iterations,
                    residual: f64::NAN,
                });
                break;
            }
            None => h,
        };
        stats.accepted = true;
        result.stats.push(stats);
        for t in 0..plan.n_t {
            let slice = out.u.block_field(t);
            let time = result.t_final + (t + 1) as f64 * h;
            result.energy_trace.push((time, free_energy(model, &slice)));
            picker.offer(time, &slice);
        }
        result.t_final = if lands {
            t_end
        } else {
            result.t_final + plan.n_t as f64 * h
        };
        result.final_u = last;
        result.ht_schedule.push(h);
        window += 1;
        h = next_h;
    }
    result.snapshots = picker.finish();
    Ok(result)
}

/// Adaptive marching from `h0` until `t_end`.
pub fn adaptive_march(
    model: &RDModel,
    u0: &Field,
    h0: f64,
    n_t: usize,
    rule: AdaptiveRule,
    t_end: f64,
    solver: SolverKind,
    settings: &SolverSettings,
) -> Result<MarchResult> {
    let plan = MarchPlan {
        windows: 1,
        n_t,
        h_t: h0,
        solver,
        adaptive: Some(rule),
        t_end: Some(t_end),
        snapshot_times: Vec::new(),
    };
    march(model, u0, &plan, settings)
}

/// Discrete free energy with periodic differences and `σ` taken from the
/// model's stencil (`σ ≡ 1` when it has none).
pub fn free_energy(model: &RDModel, u: &Field) -> f64 {
    let grid = &model.grid;
    let n = grid.n();
    let h = grid.h();
    let stencil = model
        .diffusion_stencil()
        .unwrap_or_else(|| crate::equations::MobilityStencil::uniform(grid, 1.0));
    let w = model.reaction.w;
    let v = u.values();
    let mut grad = 0.0;
    let mut pot = 0.0;
    for i in 0..n {
        let ip = (i + 1) % n;
        for j in 0..n {
            let jp = (j + 1) % n;
            let c = v[i * n + j];
            let dx = v[ip * n + j] - c;
            let dy = v[i * n + jp] - c;
            grad += stencil.sigma_x(i, j) * dx * dx + stencil.sigma_y(i, j) * dy * dy;
            pot += w(c);
        }
    }
    // The squared differences are difference quotients times h², so the
    // h² cell area cancels in the gradient term.
    0.5 * model.a * grad + model.b * pot * h * h
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub front_radius: Option<f64>,
    pub l1_discrepancy: f64,
}

/// Front radius around the domain centre and `h² Σ |u - u_ref|`.
pub fn diagnostics(u: &Field, u_ref: &Field, grid: &Grid2D) -> Result<Diagnostics> {
    u.check_n(grid.n())?;
    u_ref.check_n(grid.n())?;
    let h = grid.h();
    let l1 = h
        * h
        * u.values()
            .iter()
            .zip(u_ref.values())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    Ok(Diagnostics {
        front_radius: front_radius(u, grid),
        l1_discrepancy: l1,
    })
}

/// Mean distance from the centre of the first zero crossing along the four
/// axis rays through the centre, with linear interpolation between nodes.
pub fn front_radius(u: &Field, grid: &Grid2D) -> Option<f64> {
    let n = grid.n();
    let h = grid.h();
    let c = n / 2;
    let center = 0.5 * grid.length();
    let rays: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    let mut found = Vec::new();
    for (di, dj) in rays {
        let at = |k: isize| {
            let i = (c as isize + di * k).rem_euclid(n as isize) as usize;
            let j = (c as isize + dj * k).rem_euclid(n as isize) as usize;
            u.get(i, j)
        };
        let offset = grid.coord(c) - center;
        for k in 0..(n / 2) as isize {
            let (a, b) = (at(k), at(k + 1));
            if a == 0.0 {
                found.push((k as f64 * h + offset * (di + dj) as f64).abs());
                break;
            }
            if a * b < 0.0 {
                let s = k as f64 + a / (a - b);
                found.push((s * h + offset * (di + dj) as f64).abs());
                break;
            }
        }
    }
    (!found.is_empty()).then(|| found.iter().sum::<f64>() / found.len() as f64)
}
