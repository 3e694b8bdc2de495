//! Flat `key=value` configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rd_pdhg::baselines::KrylovParams;
use rd_pdhg::driver::{AdaptiveRule, SolverKind, SolverSettings};
use rd_pdhg::pdhg::format_f64;
use rd_pdhg::{ModelKind, ModelParams, PdhgParams};

use crate::error::{CliError, CliResult};

/// Every accepted key. Anything else in a config file is rejected.
pub const KEYS: &[&str] = &[
    "adaptive",
    "dt",
    "eps",
    "eps0",
    "equation",
    "fast_iters",
    "flow_eps",
    "flow_mu",
    "flow_time",
    "gamma",
    "ht",
    "ht_cap",
    "jobs",
    "max_iter",
    "mu",
    "nt",
    "nx",
    "omega",
    "omega_sor",
    "out",
    "pgm",
    "preconditioned",
    "ref_ht",
    "reference",
    "snapshot_times",
    "solver",
    "sweep_ht",
    "sweep_nt",
    "sweep_nx",
    "t_end",
    "tau_p",
    "tau_u",
    "theta",
    "tol",
    "u",
    "windows",
];

/// Uninterpreted settings: file entries overlaid with flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

impl RawConfig {
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let mut raw = RawConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::ConfigFile {
                path: origin.to_string(),
                msg: format!("line {} is not key=value", lineno + 1),
            })?;
            raw.set(k, v.trim())?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let key = normalize_key(key);
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::UnknownKey(key));
        }
        self.entries.insert(key, value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn overlay(&mut self, other: &RawConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    fn parsed<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>().map_err(|_| CliError::Malformed {
                    key: key.to_string(),
                    value: v.to_string(),
                })
            })
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    fn flag(&self, key: &str, default: bool) -> CliResult<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => match v.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(CliError::Malformed {
                    key: key.into(),
                    value: v.into(),
                }),
            },
        }
    }

    fn list(&self, key: &str) -> CliResult<Option<Vec<f64>>> {
        self.get(key).map(|v| parse_list(key, v)).transpose()
    }

    fn solver(&self, key: &str, default: SolverKind) -> CliResult<SolverKind> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| CliError::Solver {
                key: key.into(),
                value: v.into(),
            }),
        }
    }
}

/// Parses `a,b,c` or `lin:start:stop:count`.
pub fn parse_list(key: &str, text: &str) -> CliResult<Vec<f64>> {
    let malformed = || CliError::Malformed {
        key: key.to_string(),
        value: text.to_string(),
    };
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(spec) = text.strip_prefix("lin:") {
        let parts: Vec<&str> = spec.split(':').collect();
        let [a, b, n] = parts.as_slice() else {
            return Err(malformed());
        };
        let a: f64 = a.trim().parse().map_err(|_| malformed())?;
        let b: f64 = b.trim().parse().map_err(|_| malformed())?;
        let n: usize = n.trim().parse().map_err(|_| malformed())?;
        return Ok(match n {
            0 => Vec::new(),
            1 => vec![a],
            _ => (0..n)
                .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
                .collect(),
        });
    }
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| malformed()))
        .collect()
}

fn format_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format_f64(*x))
        .collect::<Vec<_>>()
        .join(",")
}

fn positive(key: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::range(key, format!("must be positive, got {v}")))
    }
}

fn at_least(key: &str, v: usize, lo: usize) -> CliResult<usize> {
    if v >= lo {
        Ok(v)
    } else {
        Err(CliError::range(
            key,
            format!("must be at least {lo}, got {v}"),
        ))
    }
}

fn integral(key: &str, v: f64) -> CliResult<usize> {
    if v.fract() == 0.0 && v >= 1.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(CliError::range(
            key,
            format!("entries must be positive integers, got {v}"),
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSettings {
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub dt: Option<f64>,
    pub time: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub equation: ModelKind,
    pub eps0: f64,
    pub mu: f64,
    pub nx: usize,
    pub ht: f64,
    pub nt: usize,
    pub windows: usize,
    pub solver: SolverKind,
    pub settings: SolverSettings,
    pub adaptive: Option<AdaptiveRule>,
    pub t_end: Option<f64>,
    pub out: PathBuf,
    pub jobs: usize,
    pub snapshot_times: Vec<f64>,
    pub pgm: bool,
    pub theta: Option<f64>,
    pub u: f64,
    pub flow: FlowSettings,
    pub reference: SolverKind,
    pub ref_ht: f64,
    pub sweep_ht: Vec<f64>,
    pub sweep_nt: Vec<usize>,
    pub sweep_nx: Vec<usize>,
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> CliResult<Self> {
        let equation = match raw.get("equation") {
            None => ModelKind::AllenCahn,
            Some(v) => v.parse().map_err(|_| CliError::Equation {
                key: "equation".into(),
                value: v.into(),
            })?,
        };
        let eps0 = positive("eps0", raw.or("eps0", 0.1)?)?;
        let mu: f64 = raw.or("mu", 5.0)?;
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(CliError::range(
                "mu",
                format!("must be non-negative, got {mu}"),
            ));
        }
        let nx = at_least("nx", raw.or("nx", 64)?, 2)?;
        let ht = positive("ht", raw.or("ht", 1e-3)?)?;
        let nt = at_least("nt", raw.or("nt", 1)?, 1)?;
        let windows = at_least("windows", raw.or("windows", 1)?, 1)?;
        let solver = raw.solver("solver", SolverKind::Pdhg)?;

        let d = PdhgParams::default();
        let pdhg = PdhgParams {
            tau_u: positive("tau_u", raw.or("tau_u", d.tau_u)?)?,
            tau_p: positive("tau_p", raw.or("tau_p", d.tau_p)?)?,
            omega: raw.or("omega", d.omega)?,
            epsilon: raw.or("eps", d.epsilon)?,
            tol: positive("tol", raw.or("tol", d.tol)?)?,
            max_iter: at_least("max_iter", raw.or("max_iter", d.max_iter)?, 1)?,
            preconditioned: raw.flag("preconditioned", d.preconditioned)?,
        };
        if !(pdhg.omega.is_finite() && pdhg.omega >= 0.0) {
            return Err(CliError::range("omega", "must be non-negative"));
        }
        if !(pdhg.epsilon.is_finite() && pdhg.epsilon >= 0.0) {
            return Err(CliError::range("eps", "must be non-negative"));
        }
        let omega_sor: f64 = raw.or("omega_sor", 1.0)?;
        if !(omega_sor > 0.0 && omega_sor < 2.0) {
            return Err(CliError::range("omega_sor", "must lie in (0, 2)"));
        }
        let settings = SolverSettings {
            pdhg,
            krylov: KrylovParams::default(),
            omega_sor,
        };

        let adaptive = if raw.flag("adaptive", false)? {
            let cap = positive("ht_cap", raw.or("ht_cap", ht)?)?;
            if cap < ht {
                return Err(CliError::range(
                    "ht_cap",
                    format!("must be at least ht = {ht}"),
                ));
            }
            let fast = at_least("fast_iters", raw.or("fast_iters", 200)?, 1)?;
            Some(AdaptiveRule {
                ht_cap: cap,
                fast_iter_threshold: fast,
            })
        } else {
            None
        };
        let t_end = raw
            .parsed::<f64>("t_end")?
            .map(|t| positive("t_end", t))
            .transpose()?;

        let jobs = at_least("jobs", raw.or("jobs", 1)?, 1)?;
        let snapshot_times = raw.list("snapshot_times")?.unwrap_or_default();
        if let Some(t) = snapshot_times
            .iter()
            .find(|t| !(t.is_finite() && **t >= 0.0))
        {
            return Err(CliError::range(
                "snapshot_times",
                format!("negative time {t}"),
            ));
        }
        let theta = raw.parsed::<f64>("theta")?;
        if let Some(th) = theta {
            if !(0.0..1.0).contains(&th) {
                return Err(CliError::range(
                    "theta",
                    format!("must lie in [0, 1), got {th}"),
                ));
            }
        }
        let u: f64 = raw.or("u", 0.5)?;
        if !(u > 0.0 && u < 1.0) {
            return Err(CliError::range("u", format!("must lie in (0, 1), got {u}")));
        }
        let opt_pos = |key: &str| -> CliResult<Option<f64>> {
            raw.parsed::<f64>(key)?
                .map(|v| positive(key, v))
                .transpose()
        };
        let flow = FlowSettings {
            gamma: opt_pos("gamma")?,
            epsilon: opt_pos("flow_eps")?,
            dt: opt_pos("dt")?,
            time: positive("flow_time", raw.or("flow_time", 20.0)?)?,
            mu: positive("flow_mu", raw.or("flow_mu", 1.0)?)?,
        };
        let reference = raw.solver("reference", SolverKind::Imex)?;
        let ref_ht = positive("ref_ht", raw.or("ref_ht", ht)?)?;

        let sweep_ht = raw.list("sweep_ht")?.unwrap_or_else(|| vec![ht]);
        for &v in &sweep_ht {
            positive("sweep_ht", v)?;
        }
        let ints = |key: &str, default: usize| -> CliResult<Vec<usize>> {
            match raw.list(key)? {
                None => Ok(vec![default]),
                Some(v) => v.into_iter().map(|x| integral(key, x)).collect(),
            }
        };
        let sweep_nt = ints("sweep_nt", nt)?;
        let sweep_nx = ints("sweep_nx", nx)?;
        if sweep_nx.iter().any(|&n| n < 2) {
            return Err(CliError::range("sweep_nx", "grid sizes must be at least 2"));
        }

        Ok(RunConfig {
            equation,
            eps0,
            mu,
            nx,
            ht,
            nt,
            windows,
            solver,
            settings,
            adaptive,
            t_end,
            out: PathBuf::from(raw.get("out").unwrap_or("out")),
            jobs,
            snapshot_times,
            pgm: raw.flag("pgm", false)?,
            theta,
            u,
            flow,
            reference,
            ref_ht,
            sweep_ht,
            sweep_nt,
            sweep_nx,
        })
    }

    pub fn model_params(&self, nx: usize) -> ModelParams {
        ModelParams {
            eps0: self.eps0,
            mu: self.mu,
            n: nx,
        }
    }

    /// Physical end time of `solve` and `compare`.
    pub fn end_time(&self) -> f64 {
        self.t_end
            .unwrap_or(self.windows as f64 * self.nt as f64 * self.ht)
    }

    /// Fully resolved `key=value` text; loading it back reproduces this config.
    pub fn echo(&self) -> String {
        let p = &self.settings.pdhg;
        let mut pairs: Vec<(&str, String)> = vec![
            ("equation", self.equation.name().to_string()),
            ("eps0", format_f64(self.eps0)),
            ("mu", format_f64(self.mu)),
            ("nx", self.nx.to_string()),
            ("ht", format_f64(self.ht)),
            ("nt", self.nt.to_string()),
            ("windows", self.windows.to_string()),
            ("solver", self.solver.name().to_string()),
            ("tau_u", format_f64(p.tau_u)),
            ("tau_p", format_f64(p.tau_p)),
            ("omega", format_f64(p.omega)),
            ("eps", format_f64(p.epsilon)),
            ("tol", format_f64(p.tol)),
            ("max_iter", p.max_iter.to_string()),
            ("preconditioned", p.preconditioned.to_string()),
            ("omega_sor", format_f64(self.settings.omega_sor)),
            ("adaptive", self.adaptive.is_some().to_string()),
            ("out", self.out.display().to_string()),
            ("jobs", self.jobs.to_string()),
            ("snapshot_times", format_list(&self.snapshot_times)),
            ("pgm", self.pgm.to_string()),
            ("u", format_f64(self.u)),
            ("flow_time", format_f64(self.flow.time)),
            ("flow_mu", format_f64(self.flow.mu)),
            ("reference", self.reference.name().to_string()),
            ("ref_ht", format_f64(self.ref_ht)),
            ("sweep_ht", format_list(&self.sweep_ht)),
            (
                "sweep_nt",
                self.sweep_nt
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "sweep_nx",
                self.sweep_nx
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ];
        if let Some(rule) = &self.adaptive {
            pairs.push(("ht_cap", format_f64(rule.ht_cap)));
            pairs.push(("fast_iters", rule.fast_iter_threshold.to_string()));
        }
        let optional = [
            ("t_end", self.t_end),
            ("theta", self.theta),
            ("gamma", self.flow.gamma),
            ("flow_eps", self.flow.epsilon),
            ("dt", self.flow.dt),
        ];
        for (k, v) in optional {
            if let Some(v) = v {
                pairs.push((k, format_f64(v)));
            }
        }
        pairs.sort_by_key(|p| p.0);
        let mut text = String::new();
        for (k, v) in pairs {
            let _ = writeln!(text, "{k}={v}");
        }
        text
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .echo()
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string())))
            .collect();
        serde_json::Value::Object(map)
    }
}
