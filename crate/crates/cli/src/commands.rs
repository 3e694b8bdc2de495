use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use rd_pdhg::driver::{diagnostics, march, MarchPlan, MarchResult, SolverKind, WindowStats};
use rd_pdhg::field_io::{write_field, write_pgm};
use rd_pdhg::flow::{integrate_flow, FlowParams, WindowFlow};
use rd_pdhg::pdhg::{format_f64, rate_series, DEFAULT_RATE_PREFIX};
use rd_pdhg::theory::{
    discrete_hyperparams, rate_bound, special_params, theory_report, THETA_DISCRETE_MAX,
};
use rd_pdhg::{
    build_model, initial_condition, solve_window, Precond, RDModel, SpaceTimeVec, WindowProblem,
};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Output directory plus the manifest describing the run.
pub struct RunDir {
    root: PathBuf,
    manifest: serde_json::Value,
    start: Instant,
}

impl RunDir {
    /// Creates the directory and writes the manifest and config echo before
    /// any solver work starts.
    pub fn create(command: &str, cfg: &RunConfig, threads: usize) -> CliResult<Self> {
        let root = cfg.out.clone();
        fs::create_dir_all(&root).map_err(|e| CliError::output(&root, e))?;
        let started = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let manifest = json!({
            "tool": "rd-pdhg",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": cfg.to_json(),
            "threads": threads,
            "started_unix": started,
            "status": "running",
            "wall_time": null,
        });
        let dir = Self {
            root,
            manifest,
            start: Instant::now(),
        };
        dir.write_manifest()?;
        dir.write_text("effective.cfg", &cfg.echo())?;
        Ok(dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write_manifest(&self) -> CliResult<()> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("json value");
        self.write_text("manifest.json", &text)
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::output(&path, e))
    }

    pub fn create_file(&self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::output(parent, e))?;
        }
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::output(&path, e))
    }

    pub fn finish(mut self, status: &str, extra: serde_json::Value) -> CliResult<()> {
        self.manifest["status"] = json!(status);
        self.manifest["wall_time"] = json!(self.start.elapsed().as_secs_f64());
        self.manifest["summary"] = extra;
        self.write_manifest()
    }
}

fn build(cfg: &RunConfig, nx: usize) -> CliResult<RDModel> {
    build_model(cfg.equation, cfg.model_params(nx)).map_err(|e| match e {
        rd_pdhg::Error::InvalidParameter(msg) => CliError::range("eps0", msg),
        other => CliError::Solve(other),
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::output(path, e)
}

fn write_march_outputs(dir: &RunDir, res: &MarchResult, pgm: bool) -> CliResult<()> {
    res.write_stats_csv(dir.create_file("stats.csv")?)?;
    let mut energy = csv_writer(dir.create_file("energy.csv")?);
    energy.write_record(["t", "energy"]).map_err(core_csv)?;
    for (t, e) in &res.energy_trace {
        energy
            .write_record([format_f64(*t), format_f64(*e)])
            .map_err(core_csv)?;
    }
    energy.flush().map_err(io_err(&dir.path("energy.csv")))?;
    for (k, snap) in res.snapshots.iter().enumerate() {
        write_field(
            dir.create_file(&format!("snapshots/snap_{k:03}.rdf"))?,
            &snap.u,
            snap.t,
        )?;
        if pgm {
            write_pgm(
                dir.create_file(&format!("snapshots/snap_{k:03}.pgm"))?,
                &snap.u,
            )?;
        }
    }
    write_field(dir.create_file("final.rdf")?, &res.final_u, res.t_final)?;
    Ok(())
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

fn core_csv(e: csv::Error) -> CliError {
    CliError::Solve(rd_pdhg::Error::Csv(e))
}

fn plan_for(
    cfg: &RunConfig,
    solver: SolverKind,
    h_t: f64,
    n_t: usize,
    windows: usize,
) -> MarchPlan {
    let mut snapshot_times = cfg.snapshot_times.clone();
    if snapshot_times.is_empty() {
        snapshot_times.push(cfg.end_time());
    }
    MarchPlan {
        windows,
        n_t,
        h_t,
        solver,
        adaptive: cfg.adaptive,
        t_end: cfg.adaptive.map(|_| cfg.end_time()),
        snapshot_times,
    }
}

fn summarize(res: &MarchResult) -> serde_json::Value {
    let iterations: usize = res
        .stats
        .iter()
        .filter(|s| s.accepted)
        .map(|s| s.iterations)
        .sum();
    json!({
        "t_final": res.t_final,
        "windows": res.ht_schedule.len(),
        "iterations": iterations,
        "mean_ht": res.mean_accepted_ht(),
        "aborted": res.aborted.as_ref().map(|e| e.to_string()),
    })
}

pub fn solve(cfg: &RunConfig) -> CliResult<()> {
    let dir = RunDir::create("solve", cfg, 1)?;
    let model = build(cfg, cfg.nx)?;
    let u0 = initial_condition(cfg.equation, &model.grid);
    let plan = plan_for(cfg, cfg.solver, cfg.ht, cfg.nt, cfg.windows);
    let res = march(&model, &u0, &plan, &cfg.settings)?;
    write_march_outputs(&dir, &res, cfg.pgm)?;
    let summary = summarize(&res);
    println!(
        "solve: {} windows to t = {}, {} iterations",
        res.ht_schedule.len(),
        format_f64(res.t_final),
        summary["iterations"]
    );
    if let Some(mean) = res.mean_accepted_ht() {
        if cfg.adaptive.is_some() {
            println!("mean accepted h_t = {}", format_f64(mean));
        }
    }
    match res.aborted {
        Some(e) => {
            dir.finish("failed", summary)?;
            Err(CliError::Solve(e))
        }
        None => dir.finish("ok", summary),
    }
}

pub fn flow(cfg: &RunConfig) -> CliResult<()> {
    let dir = RunDir::create("flow", cfg, 1)?;
    let model = build(cfg, cfg.nx)?;
    let u0 = initial_condition(cfg.equation, &model.grid);
    let report = theory_report(&model, cfg.ht, cfg.nt)?;
    let (gamma, epsilon) = match (cfg.flow.gamma, cfg.flow.epsilon) {
        (Some(g), Some(e)) => (g, e),
        (g, e) => {
            let (sg, se) = special_params(report.kappa).map_err(|err| {
                CliError::range(
                    "gamma",
                    format!("no default available ({err}); set gamma and flow_eps"),
                )
            })?;
            (g.unwrap_or(sg), e.unwrap_or(se))
        }
    };
    let dt = cfg.flow.dt.unwrap_or_else(|| {
        let s = report.sigma_hi;
        (0.25 / (gamma * s * s + epsilon)).min(0.05)
    });
    let fp = FlowParams {
        gamma,
        epsilon,
        dt,
        t_end: cfg.flow.time,
        mu: cfg.flow.mu,
    };
    let prob = WindowProblem::new(&model, u0.clone(), cfg.nt, cfg.ht)?;
    let pc = Precond::for_problem(&prob)?;
    let sys = WindowFlow {
        prob: &prob,
        pc: &pc,
    };
    let traj = integrate_flow(
        &sys,
        &fp,
        SpaceTimeVec::replicate(&u0, cfg.nt),
        prob.zeros(),
    )?;
    traj.write_csv(dir.create_file("flow.csv")?)?;
    let rate = traj.fitted_rate();
    let bound = rate_bound(report.theta);
    println!("gamma = {}", format_f64(gamma));
    println!("epsilon = {}", format_f64(epsilon));
    println!("dt = {}", format_f64(dt));
    println!("fitted_rate = {}", format_f64(rate));
    println!("rate_bound = {}", format_f64(bound));
    dir.finish(
        "ok",
        json!({ "gamma": gamma, "epsilon": epsilon, "dt": dt, "fitted_rate": rate, "rate_bound": bound }),
    )
}

pub fn theory(cfg: &RunConfig) -> CliResult<()> {
    let dir = RunDir::create("theory", cfg, 1)?;
    let model = build(cfg, cfg.nx)?;
    let report = theory_report(&model, cfg.ht, cfg.nt)?;
    let mut lines: Vec<(String, serde_json::Value)> = vec![
        ("zeta".into(), json!(report.zeta)),
        ("theta".into(), json!(report.theta)),
        ("theta_tilde".into(), json!(report.theta_tilde)),
        ("sigma_lo".into(), json!(report.sigma_lo)),
        ("sigma_hi".into(), json!(report.sigma_hi)),
        ("kappa".into(), json!(report.kappa)),
        ("flow_rate_bound".into(), json!(report.flow_rate_bound)),
        ("ht_max_existence".into(), json!(report.ht_max_existence)),
        ("surrogate".into(), json!(report.surrogate)),
    ];
    let theta = cfg.theta.unwrap_or(report.theta);
    if theta < THETA_DISCRETE_MAX {
        let d = discrete_hyperparams(theta, cfg.u)?;
        lines.extend([
            ("theta_discrete".into(), json!(theta)),
            ("u".into(), json!(d.u)),
            ("tau_p".into(), json!(d.tau_p)),
            ("tau_u".into(), json!(d.tau_u)),
            ("omega".into(), json!(d.omega)),
            ("epsilon".into(), json!(d.epsilon)),
            ("phi".into(), json!(d.phi)),
        ]);
    } else {
        println!("theta = {theta} is outside the discrete convergence range");
    }
    let mut obj = serde_json::Map::new();
    for (k, v) in lines {
        let shown = match &v {
            serde_json::Value::Number(n) => format_f64(n.as_f64().unwrap_or(f64::NAN)),
            serde_json::Value::Null => "none".to_string(),
            other => other.to_string(),
        };
        println!("{k} = {shown}");
        obj.insert(k, v);
    }
    let value = serde_json::Value::Object(obj);
    dir.write_text(
        "theory.json",
        &serde_json::to_string_pretty(&value).expect("json"),
    )?;
    dir.finish("ok", value)
}

struct SweepRow {
    nx: usize,
    ht: f64,
    nt: usize,
    rbar: f64,
    iterations: usize,
    converged: bool,
    diverged: bool,
    final_residual: f64,
}

fn sweep_one(
    cfg: &RunConfig,
    dir: &RunDir,
    k: usize,
    nx: usize,
    ht: f64,
    nt: usize,
) -> CliResult<SweepRow> {
    let model = build(cfg, nx)?;
    let u0 = initial_condition(cfg.equation, &model.grid);
    let prob = WindowProblem::new(&model, u0.clone(), nt, ht)?;
    let pc = Precond::for_problem(&prob)?;
    let (_, stats) = solve_window(
        &prob,
        &pc,
        &cfg.settings.pdhg,
        SpaceTimeVec::replicate(&u0, nt),
        prob.zeros(),
    )?;
    stats.write_csv(dir.create_file(&format!("runs/run_{k:04}/history.csv"))?)?;
    let rbar = rate_series(&stats.fhat_history(), Some(DEFAULT_RATE_PREFIX))
        .map(|r| r.1)
        .unwrap_or(f64::NAN);
    Ok(SweepRow {
        nx,
        ht,
        nt,
        rbar,
        iterations: stats.iterations,
        converged: stats.converged,
        diverged: stats.diverged,
        final_residual: stats.final_residual(),
    })
}

pub fn sweep(cfg: &RunConfig, threads: usize) -> CliResult<()> {
    let dir = RunDir::create("sweep", cfg, threads)?;
    let mut cases = Vec::new();
    for &nx in &cfg.sweep_nx {
        for &ht in &cfg.sweep_ht {
            for &nt in &cfg.sweep_nt {
                cases.push((nx, ht, nt));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::range("jobs", e.to_string()))?;
    let rows: Vec<CliResult<SweepRow>> = pool.install(|| {
        cases
            .par_iter()
            .enumerate()
            .map(|(k, &(nx, ht, nt))| sweep_one(cfg, &dir, k, nx, ht, nt))
            .collect()
    });
    let mut out = csv_writer(dir.create_file("sweep.csv")?);
    out.write_record([
        "run",
        "nx",
        "ht",
        "nt",
        "rbar",
        "iterations",
        "converged",
        "diverged",
        "final_residual",
    ])
    .map_err(core_csv)?;
    let mut converged = 0;
    for (k, row) in rows.into_iter().enumerate() {
        let r = row?;
        converged += r.converged as usize;
        out.write_record([
            k.to_string(),
            r.nx.to_string(),
            format_f64(r.ht),
            r.nt.to_string(),
            format_f64(r.rbar),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.diverged.to_string(),
            format_f64(r.final_residual),
        ])
        .map_err(core_csv)?;
    }
    out.flush().map_err(io_err(&dir.path("sweep.csv")))?;
    println!("sweep: {} runs, {} converged", cases.len(), converged);
    dir.finish("ok", json!({ "runs": cases.len(), "converged": converged }))
}

fn timing_row(role: &str, solver: SolverKind, h_t: f64, stats: &[WindowStats]) -> [String; 6] {
    let accepted = stats.iter().filter(|s| s.accepted);
    let iterations: usize = accepted.clone().map(|s| s.iterations).sum();
    let wall: f64 = stats.iter().map(|s| s.wall_time).sum();
    [
        role.to_string(),
        solver.name().to_string(),
        format_f64(h_t),
        accepted.count().to_string(),
        iterations.to_string(),
        format_f64(wall),
    ]
}

pub fn compare(cfg: &RunConfig) -> CliResult<()> {
    let dir = RunDir::create("compare", cfg, 1)?;
    let model = build(cfg, cfg.nx)?;
    let u0 = initial_condition(cfg.equation, &model.grid);
    let t_end = cfg.end_time();
    let plan = plan_for(cfg, cfg.solver, cfg.ht, cfg.nt, cfg.windows);
    let ref_windows = ((t_end / cfg.ref_ht).round() as usize).max(1);
    let ref_plan = MarchPlan {
        adaptive: None,
        t_end: None,
        ..plan_for(cfg, cfg.reference, cfg.ref_ht, 1, ref_windows)
    };
    let main = march(&model, &u0, &plan, &cfg.settings)?;
    let reference = march(&model, &u0, &ref_plan, &cfg.settings)?;
    let (main, reference) = match (main, reference) {
        (
            MarchResult {
                aborted: Some(e), ..
            },
            _,
        )
        | (
            _,
            MarchResult {
                aborted: Some(e), ..
            },
        ) => return Err(CliError::Solve(e)),
        pair => pair,
    };

    let mut out = csv_writer(dir.create_file("compare.csv")?);
    out.write_record([
        "t",
        "t_solver",
        "t_reference",
        "l1",
        "front_solver",
        "front_reference",
    ])
    .map_err(core_csv)?;
    let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
    for (a, b) in main.snapshots.iter().zip(&reference.snapshots) {
        let d = diagnostics(&a.u, &b.u, &model.grid)?;
        let d_ref = diagnostics(&b.u, &b.u, &model.grid)?;
        out.write_record([
            format_f64(a.requested),
            format_f64(a.t),
            format_f64(b.t),
            format_f64(d.l1_discrepancy),
            opt(d.front_radius),
            opt(d_ref.front_radius),
        ])
        .map_err(core_csv)?;
        println!(
            "t = {}: l1 = {}",
            format_f64(a.requested),
            format_f64(d.l1_discrepancy)
        );
    }
    out.flush().map_err(io_err(&dir.path("compare.csv")))?;

    let mut timing = csv_writer(dir.create_file("timing.csv")?);
    timing
        .write_record([
            "role",
            "solver",
            "h_t",
            "windows",
            "iterations",
            "wall_time",
        ])
        .map_err(core_csv)?;
    timing
        .write_record(timing_row("solver", cfg.solver, cfg.ht, &main.stats))
        .map_err(core_csv)?;
    timing
        .write_record(timing_row(
            "reference",
            cfg.reference,
            cfg.ref_ht,
            &reference.stats,
        ))
        .map_err(core_csv)?;
    timing.flush().map_err(io_err(&dir.path("timing.csv")))?;
    write_field(
        dir.create_file("final_solver.rdf")?,
        &main.final_u,
        main.t_final,
    )?;
    write_field(
        dir.create_file("final_reference.rdf")?,
        &reference.final_u,
        reference.t_final,
    )?;
    dir.finish(
        "ok",
        json!({ "solver": summarize(&main), "reference": summarize(&reference) }),
    )
}
