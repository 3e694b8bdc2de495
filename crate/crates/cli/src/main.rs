mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{RawConfig, RunConfig};
use error::CliResult;

#[derive(Parser, Debug)]
#[command(
    name = "rd-pdhg",
    version,
    about = "Implicit reaction-diffusion solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// March a model in time and write stats, energies and snapshots.
    Solve(Opts),
    /// Integrate the continuous-time flow on the first window.
    Flow(Opts),
    /// Print rate constants and step sizes for a configuration.
    Theory(Opts),
    /// Run the Cartesian product of the sweep axes.
    Sweep(Opts),
    /// Run a solver and a reference and compare them.
    Compare(Opts),
}

/// Every option is also a config-file key (dashes become underscores).
/// Values stay raw strings here so errors can name the key.
#[derive(Args, Debug, Default)]
#[command(allow_negative_numbers = true)]
struct Opts {
    /// key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// allen_cahn, cahn_hilliard, var_coeff or sixth_order.
    #[arg(long)]
    equation: Option<String>,
    /// Interface width parameter of the model.
    #[arg(long)]
    eps0: Option<String>,
    /// Mobility amplitude of var_coeff.
    #[arg(long)]
    mu: Option<String>,
    /// Grid points per axis.
    #[arg(long)]
    nx: Option<String>,
    /// Time step (initial step when adaptive).
    #[arg(long)]
    ht: Option<String>,
    /// Implicit steps per window.
    #[arg(long)]
    nt: Option<String>,
    /// Number of windows for fixed stepping.
    #[arg(long)]
    windows: Option<String>,
    /// pdhg, imex, fixed_point, nl_sor or newton.
    #[arg(long)]
    solver: Option<String>,
    /// Primal step size.
    #[arg(long = "tau-u")]
    tau_u: Option<String>,
    /// Dual step size.
    #[arg(long = "tau-p")]
    tau_p: Option<String>,
    /// Extrapolation weight.
    #[arg(long)]
    omega: Option<String>,
    /// Dual damping of the PDHG iteration.
    #[arg(long)]
    eps: Option<String>,
    /// Stop when the scaled residual drops below this.
    #[arg(long)]
    tol: Option<String>,
    /// Iteration cap per window.
    #[arg(long = "max-iter")]
    max_iter: Option<String>,
    /// Use the block preconditioner (true/false).
    #[arg(long)]
    preconditioned: Option<String>,
    /// Relaxation factor of nonlinear SOR.
    #[arg(long = "omega-sor")]
    omega_sor: Option<String>,
    /// Adapt the time step to the iteration count.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    adaptive: Option<String>,
    /// Largest adaptive time step.
    #[arg(long = "ht-cap")]
    ht_cap: Option<String>,
    /// Windows below this many iterations grow the step.
    #[arg(long = "fast-iters")]
    fast_iters: Option<String>,
    /// Physical end time.
    #[arg(long = "t-end")]
    t_end: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads for sweeps.
    #[arg(long)]
    jobs: Option<String>,
    /// Comma list or lin:start:stop:count.
    #[arg(long = "snapshot-times")]
    snapshot_times: Option<String>,
    /// Also write PGM images of snapshots.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pgm: Option<String>,
    /// Override the coupling constant.
    #[arg(long)]
    theta: Option<String>,
    /// Free parameter of the step-size family, in (0, 1).
    #[arg(long)]
    u: Option<String>,
    /// Flow weight on the dual velocity.
    #[arg(long)]
    gamma: Option<String>,
    /// Flow dual damping.
    #[arg(long = "flow-eps")]
    flow_eps: Option<String>,
    /// RK4 step of the flow.
    #[arg(long)]
    dt: Option<String>,
    /// Integration time of the flow.
    #[arg(long = "flow-time")]
    flow_time: Option<String>,
    /// Dual weight in the Lyapunov function.
    #[arg(long = "flow-mu")]
    flow_mu: Option<String>,
    /// Reference solver for compare.
    #[arg(long)]
    reference: Option<String>,
    /// Time step of the reference solver.
    #[arg(long = "ref-ht")]
    ref_ht: Option<String>,
    /// Time steps to sweep.
    #[arg(long = "sweep-ht")]
    sweep_ht: Option<String>,
    /// Window lengths to sweep.
    #[arg(long = "sweep-nt")]
    sweep_nt: Option<String>,
    /// Grid sizes to sweep.
    #[arg(long = "sweep-nx")]
    sweep_nx: Option<String>,
}

impl Opts {
    fn flag_pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("equation", &self.equation),
            ("eps0", &self.eps0),
            ("mu", &self.mu),
            ("nx", &self.nx),
            ("ht", &self.ht),
            ("nt", &self.nt),
            ("windows", &self.windows),
            ("solver", &self.solver),
            ("tau_u", &self.tau_u),
            ("tau_p", &self.tau_p),
            ("omega", &self.omega),
            ("eps", &self.eps),
            ("tol", &self.tol),
            ("max_iter", &self.max_iter),
            ("preconditioned", &self.preconditioned),
            ("omega_sor", &self.omega_sor),
            ("adaptive", &self.adaptive),
            ("ht_cap", &self.ht_cap),
            ("fast_iters", &self.fast_iters),
            ("t_end", &self.t_end),
            ("out", &self.out),
            ("jobs", &self.jobs),
            ("snapshot_times", &self.snapshot_times),
            ("pgm", &self.pgm),
            ("theta", &self.theta),
            ("u", &self.u),
            ("gamma", &self.gamma),
            ("flow_eps", &self.flow_eps),
            ("dt", &self.dt),
            ("flow_time", &self.flow_time),
            ("flow_mu", &self.flow_mu),
            ("reference", &self.reference),
            ("ref_ht", &self.ref_ht),
            ("sweep_ht", &self.sweep_ht),
            ("sweep_nt", &self.sweep_nt),
            ("sweep_nx", &self.sweep_nx),
        ]
    }

    fn resolve(&self) -> CliResult<RunConfig> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::load(path)?,
            None => RawConfig::default(),
        };
        let mut flags = RawConfig::default();
        for (key, value) in self.flag_pairs() {
            if let Some(v) = value {
                flags.set(key, v)?;
            }
        }
        raw.overlay(&flags);
        RunConfig::from_raw(&raw)
    }
}

/// Worker count: `jobs`, capped by `RD_PDHG_THREADS` when set.
fn thread_budget(jobs: usize) -> usize {
    let cap = std::env::var("RD_PDHG_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    cap.map_or(jobs, |c| jobs.min(c)).max(1)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Solve(o) => commands::solve(&o.resolve()?),
        Command::Flow(o) => commands::flow(&o.resolve()?),
        Command::Theory(o) => commands::theory(&o.resolve()?),
        Command::Sweep(o) => {
            let cfg = o.resolve()?;
            commands::sweep(&cfg, thread_budget(cfg.jobs))
        }
        Command::Compare(o) => commands::compare(&o.resolve()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_flag_is_a_config_key() {
        let opts = Opts::default();
        let flags: Vec<&str> = opts.flag_pairs().into_iter().map(|p| p.0).collect();
        for key in &flags {
            assert!(config::KEYS.contains(key), "{key}");
        }
        for key in config::KEYS {
            assert!(flags.contains(key), "{key} has no flag");
        }
    }

    #[test]
    fn thread_budget_never_zero() {
        assert!(thread_budget(1) >= 1);
    }
}
