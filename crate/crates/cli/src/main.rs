//! `crw`: simulate coalescing walks, run verification suites, estimate
//! scale constants and query the exact oracles.

mod config;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use coalescing_walks::engine::{
    packing_feasible, sample_pair, sample_scattered, simulate_replicas, Lattice, ParticleConfig, StopRule,
    DEFAULT_EVENT_CAP,
};
use coalescing_walks::error::SuiteError;
use coalescing_walks::estimators::{
    choose_a_n, estimate_escape, estimate_theta, exact_solve_feasible, ThetaMethod, WATSON_V3,
};
use coalescing_walks::oracle::{
    lem9_sum, mean_hitting_time_from_uniform, occupation_identity_check, origin_hitting_times, pair_coalescence_law,
    random_reversible_chain, OracleRecord,
};
use coalescing_walks::seeding::{derive_seed, replica_rng};
use coalescing_walks::stats::Thresholds;
use coalescing_walks::suites::{run_suite, Suite, SuiteConfig, DEFAULT_SEED};
use coalescing_walks::{EngineError, TorusGeometry, TorusPoint};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration: exit 2.
    Usage(String),
    /// A run that could not finish or a suite that did not pass: exit 1.
    Failure(String),
    /// The event cap was hit: exit 3.
    EventCap(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
            CliError::EventCap(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failure(m) => write!(f, "{m}"),
            CliError::EventCap(m) => write!(f, "{m}"),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::EventCap { .. } => CliError::EventCap(e.to_string()),
            EngineError::StopRule { .. } | EngineError::InfeasiblePacking { .. } | EngineError::Lattice(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<SuiteError> for CliError {
    fn from(e: SuiteError) -> Self {
        match e {
            SuiteError::UnknownSuite(_) | SuiteError::Precondition(_) => CliError::Usage(e.to_string()),
            SuiteError::Engine(inner) => inner.into(),
            other => CliError::Failure(other.to_string()),
        }
    }
}

fn failure(e: impl fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "crw", version, about = "Coalescing random walks on the discrete torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate replicas and write one JSON trajectory record per line.
    Simulate(SimulateArgs),
    /// Run a verification suite (or `list` them) and write its CSV report.
    Verify(VerifyArgs),
    /// Estimate theta_N or the escape probability v_d.
    Estimate(EstimateArgs),
    /// Query an exact oracle.
    Oracle(OracleArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON config file, or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "N")]
    side: Option<usize>,
    /// Size of the worker pool (results do not depend on it).
    #[arg(long)]
    workers: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// full, scattered, pair or explicit.
    #[arg(long)]
    initial: Option<String>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    a: Option<f64>,
    /// Offset of the second particle of a pair, e.g. `--delta 1,0,0`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta: Option<Vec<i64>>,
    /// One particle per flag, e.g. `--site 0,0 --site 2,3`.
    #[arg(long = "site", allow_hyphen_values = true)]
    sites: Option<Vec<String>>,
    /// full, count or time.
    #[arg(long)]
    stop: Option<String>,
    #[arg(long)]
    stop_count: Option<usize>,
    #[arg(long)]
    stop_time: Option<f64>,
    #[arg(long)]
    event_cap: Option<u64>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Suite name, or `list`.
    suite: Option<String>,
    #[command(flatten)]
    common: Common,
    /// Thresholds JSON file.
    #[arg(long)]
    thresholds: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// `theta` or `vd`.
    what: Option<String>,
    #[command(flatten)]
    common: Common,
    /// exact, spectral or monte_carlo (theta only).
    #[arg(long)]
    method: Option<String>,
    /// Escape probability used for the d >= 3 asymptote.
    #[arg(long)]
    v_d: Option<f64>,
    /// Truncation radius (vd only).
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// hitting-time, pair-sum, pair-law or occupation.
    operation: Option<String>,
    #[command(flatten)]
    common: Common,
    /// Particle count (pair-sum) or chain size (occupation).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta: Option<Vec<i64>>,
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
}

impl Common {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            replicas: self.replicas,
            d: self.d,
            side: self.side,
            workers: self.workers,
            out: self.out.clone(),
            ..RunConfig::default()
        }
    }
}

fn parse_sites(raw: &[String]) -> Result<Vec<Vec<i64>>, CliError> {
    raw.iter()
        .map(|s| {
            s.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<i64>()
                        .map_err(|e| CliError::Usage(format!("bad site {s:?}: {e}")))
                })
                .collect()
        })
        .collect()
}

/// Command name and its merged configuration.
fn resolve(command: &Command) -> Result<(&'static str, RunConfig), CliError> {
    let (name, common, flags) = match command {
        Command::Simulate(a) => (
            "simulate",
            &a.common,
            RunConfig {
                initial: a.initial.clone(),
                count: a.count,
                a: a.a,
                delta: a.delta.clone(),
                sites: a.sites.as_deref().map(parse_sites).transpose()?,
                stop: a.stop.clone(),
                stop_count: a.stop_count,
                stop_time: a.stop_time,
                event_cap: a.event_cap,
                ..a.common.to_config()
            },
        ),
        Command::Verify(a) => (
            "verify",
            &a.common,
            RunConfig {
                suite: a.suite.clone(),
                thresholds: a.thresholds.clone(),
                ..a.common.to_config()
            },
        ),
        Command::Estimate(a) => (
            "estimate",
            &a.common,
            RunConfig {
                what: a.what.clone(),
                method: a.method.clone(),
                v_d: a.v_d,
                radius: a.radius,
                ..a.common.to_config()
            },
        ),
        Command::Oracle(a) => (
            "oracle",
            &a.common,
            RunConfig {
                operation: a.operation.clone(),
                n: a.n,
                speed: a.speed,
                delta: a.delta.clone(),
                times: a.times.clone(),
                ..a.common.to_config()
            },
        ),
    };
    let base = match &common.config {
        Some(path) => RunConfig::load(path, name)?,
        None => RunConfig::default(),
    };
    let mut merged = base.overlay(&flags);
    merged.seed.get_or_insert(DEFAULT_SEED);
    Ok((name, merged))
}

fn geometry(c: &RunConfig) -> Result<TorusGeometry, CliError> {
    let d = c.d.ok_or_else(|| CliError::Usage("--d is required".into()))?;
    let n = c.side.ok_or_else(|| CliError::Usage("--N is required".into()))?;
    if d < 2 {
        return Err(CliError::Usage(format!("need d >= 2, got {d}")));
    }
    if n < 4 {
        return Err(CliError::Usage(format!("need N >= 4, got {n}")));
    }
    TorusGeometry::new(d, n).map_err(|e| CliError::Usage(e.to_string()))
}

fn replicas(c: &RunConfig, default: u64) -> Result<u64, CliError> {
    match c.replicas.unwrap_or(default) {
        0 => Err(CliError::Usage("replicas must be at least 1".into())),
        r => Ok(r),
    }
}

fn point(g: &TorusGeometry, coords: &[i64]) -> Result<TorusPoint, CliError> {
    g.point(coords).map_err(|e| CliError::Usage(e.to_string()))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(failure)
}

fn run_simulate(c: &RunConfig) -> Result<String, CliError> {
    let g = geometry(c)?;
    let seed = c.seed.unwrap_or(DEFAULT_SEED);
    let reps = replicas(c, 1)?;
    let lattice = Lattice::new(g);
    let stop = match c.stop.as_deref().unwrap_or("full") {
        "full" => StopRule::FullCoalescence,
        "count" => StopRule::ReachCount(
            c.stop_count
                .ok_or_else(|| CliError::Usage("stop = count needs stop_count".into()))?,
        ),
        "time" => {
            let t = c
                .stop_time
                .ok_or_else(|| CliError::Usage("stop = time needs stop_time".into()))?;
            if !(t.is_finite() && t >= 0.0) {
                return Err(CliError::Usage(format!(
                    "stop_time must be finite and non-negative, got {t}"
                )));
            }
            StopRule::ReachTime(t)
        }
        other => return Err(CliError::Usage(format!("unknown stop rule {other:?}"))),
    };
    let cap = c.event_cap.unwrap_or(DEFAULT_EVENT_CAP);
    let records = match c.initial.as_deref().unwrap_or("full") {
        "full" => {
            let initial = ParticleConfig::full(&lattice);
            simulate_replicas(|_| Ok(initial.clone()), stop, seed, reps, cap)?
        }
        "scattered" => {
            let count = c
                .count
                .ok_or_else(|| CliError::Usage("scattered start needs count".into()))?;
            let a = c.a.unwrap_or(choose_a_n(&g) as f64);
            if count == 0 || !packing_feasible(&g, count, a) {
                return Err(CliError::Usage(format!(
                    "cannot scatter {count} particles at separation {a} on a torus of {} sites",
                    g.num_sites()
                )));
            }
            let lattice = Arc::clone(&lattice);
            simulate_replicas(
                move |rng| sample_scattered(&lattice, count, a, rng),
                stop,
                seed,
                reps,
                cap,
            )?
        }
        "pair" => match &c.delta {
            None => simulate_replicas(|rng| Ok(sample_pair(&lattice, rng)), stop, seed, reps, cap)?,
            Some(delta) => {
                let offset = point(&g, delta)?;
                if offset.is_origin() {
                    return Err(CliError::Usage("pair offset must be nonzero on the torus".into()));
                }
                simulate_replicas(
                    |rng| {
                        let x = g.point_of(rng.gen_range(0..g.num_sites()));
                        let y = g.add(&x, &offset);
                        ParticleConfig::from_points(&lattice, &[x, y])
                    },
                    stop,
                    seed,
                    reps,
                    cap,
                )?
            }
        },
        "explicit" => {
            let sites = c
                .sites
                .as_ref()
                .ok_or_else(|| CliError::Usage("explicit start needs sites".into()))?;
            let points = sites.iter().map(|s| point(&g, s)).collect::<Result<Vec<_>, _>>()?;
            let initial = ParticleConfig::from_points(&lattice, &points)?;
            if initial.count() != points.len() {
                return Err(CliError::Usage("explicit sites must be distinct".into()));
            }
            simulate_replicas(|_| Ok(initial.clone()), stop, seed, reps, cap)?
        }
        other => return Err(CliError::Usage(format!("unknown initial configuration {other:?}"))),
    };
    let mut out = String::new();
    for r in &records {
        out.push_str(&serde_json::to_string(r).map_err(failure)?);
        out.push('\n');
    }
    Ok(out)
}

fn run_verify(c: &RunConfig) -> Result<(String, bool), CliError> {
    let name = c
        .suite
        .as_deref()
        .ok_or_else(|| CliError::Usage("verify needs a suite name or `list`".into()))?;
    if name == "list" {
        let mut out = String::new();
        for s in Suite::ALL {
            out.push_str(&format!(
                "{}\t{}\n",
                s.name(),
                s.criteria().iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
            ));
        }
        return Ok((out, true));
    }
    let suite: Suite = name.parse()?;
    if c.replicas == Some(0) {
        return Err(CliError::Usage("replicas must be at least 1".into()));
    }
    let thresholds = match &c.thresholds {
        Some(path) => Thresholds::from_file(path),
        None => Thresholds::from_env(),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let config = SuiteConfig {
        seed: c.seed.unwrap_or(DEFAULT_SEED),
        replicas: c.replicas,
        thresholds,
    };
    let report = run_suite(suite, &config)?;
    for row in &report.rows {
        eprintln!(
            "{:<4} {:>2} {:<40} {}",
            if row.passed { "ok" } else { "FAIL" },
            row.criterion,
            row.check,
            row.value
        );
    }
    Ok((report.to_csv()?, report.passed()))
}

fn run_estimate(c: &RunConfig) -> Result<String, CliError> {
    let seed = c.seed.unwrap_or(DEFAULT_SEED);
    match c.what.as_deref() {
        Some("theta") => {
            let g = geometry(c)?;
            let method = match c.method.as_deref() {
                None if exact_solve_feasible(&g) => ThetaMethod::ExactSolve,
                None => ThetaMethod::Spectral,
                Some("exact") | Some("exact_solve") => ThetaMethod::ExactSolve,
                Some("spectral") => ThetaMethod::Spectral,
                Some("monte_carlo") | Some("mc") => ThetaMethod::MonteCarlo,
                Some(other) => return Err(CliError::Usage(format!("unknown method {other:?}"))),
            };
            let reps = replicas(c, 1000)?;
            let v_d = c.v_d.or((g.dim() == 3).then_some(WATSON_V3));
            let report = estimate_theta(&g, method, v_d, seed, reps).map_err(failure)?;
            to_json(&report)
        }
        Some("vd") => {
            let d = c.d.ok_or_else(|| CliError::Usage("--d is required".into()))?;
            if d < 3 {
                return Err(CliError::Usage(format!("v_d is defined only for d >= 3, got d = {d}")));
            }
            let radius = c.radius.unwrap_or(1000.0);
            if !(radius.is_finite() && radius > 0.0) {
                return Err(CliError::Usage(format!("radius must be positive, got {radius}")));
            }
            let walks = replicas(c, 10_000)?;
            to_json(&estimate_escape(d, radius, walks, seed).map_err(failure)?)
        }
        Some(other) => Err(CliError::Usage(format!("unknown estimate {other:?}; use theta or vd"))),
        None => Err(CliError::Usage("estimate needs `theta` or `vd`".into())),
    }
}

fn run_oracle(c: &RunConfig) -> Result<String, CliError> {
    let op = c
        .operation
        .as_deref()
        .ok_or_else(|| CliError::Usage("oracle needs an operation".into()))?;
    let record = match op {
        "hitting-time" => {
            let g = geometry(c)?;
            let speed = c.speed.unwrap_or(2.0);
            if !(speed.is_finite() && speed > 0.0) {
                return Err(CliError::Usage(format!("speed must be positive, got {speed}")));
            }
            let (value, residual) = match &c.delta {
                None => {
                    let (mean, residual) = mean_hitting_time_from_uniform(&g, speed).map_err(failure)?;
                    (serde_json::json!({ "from_uniform": mean }), residual)
                }
                Some(delta) => {
                    let start = g.index_of(&point(&g, delta)?);
                    let h = origin_hitting_times(&g, speed).map_err(failure)?;
                    (serde_json::json!({ "from_delta": h.times[start] }), h.residual)
                }
            };
            OracleRecord {
                operation: op.into(),
                parameters: serde_json::json!({ "d": g.dim(), "N": g.side(), "speed": speed, "delta": c.delta }),
                value,
                residual,
            }
        }
        "pair-sum" => {
            let g = geometry(c)?;
            let n = c.n.unwrap_or(2);
            let sum = lem9_sum(&g, n).map_err(|e| CliError::Usage(e.to_string()))?;
            OracleRecord {
                operation: op.into(),
                parameters: serde_json::json!({ "d": g.dim(), "N": g.side(), "n": n }),
                value: serde_json::json!({ "sum": sum.value, "states": sum.states }),
                residual: sum.residual,
            }
        }
        "pair-law" => {
            let g = geometry(c)?;
            let delta = c.delta.clone().unwrap_or_else(|| {
                let mut e = vec![0; g.dim()];
                e[0] = 1;
                e
            });
            let y = point(&g, &delta)?;
            if y.is_origin() {
                return Err(CliError::Usage("pair offset must be nonzero on the torus".into()));
            }
            let times = c
                .times
                .clone()
                .ok_or_else(|| CliError::Usage("pair-law needs --times".into()))?;
            if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                return Err(CliError::Usage("times must be finite and non-negative".into()));
            }
            let law = pair_coalescence_law(&g, &g.origin(), &y, &times).map_err(failure)?;
            OracleRecord {
                operation: op.into(),
                parameters: serde_json::json!({ "d": g.dim(), "N": g.side(), "delta": delta, "times": times }),
                value: serde_json::json!({ "survival": law }),
                residual: 0.0,
            }
        }
        "occupation" => {
            let states = c.n.unwrap_or(20);
            if states < 2 {
                return Err(CliError::Usage(format!(
                    "occupation chain needs at least 2 states, got {states}"
                )));
            }
            let seed = c.seed.unwrap_or(DEFAULT_SEED);
            let mut rng = replica_rng(derive_seed(seed, "oracle-occupation"), 0);
            let chain = random_reversible_chain(states, &mut rng);
            let f: Vec<f64> = (0..states).map(|_| rng.gen_range(0.0..1.0)).collect();
            let check = occupation_identity_check(&chain, &[0], &f).map_err(failure)?;
            OracleRecord {
                operation: op.into(),
                parameters: serde_json::json!({ "states": states, "seed": seed, "target": [0] }),
                value: serde_json::to_value(check).map_err(failure)?,
                residual: check.residual,
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown oracle operation {other:?}; use hitting-time, pair-sum, pair-law or occupation"
            )))
        }
    };
    to_json(&record)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| failure(format!("cannot write {}: {e}", p.display()))),
        None => std::io::stdout().lock().write_all(text.as_bytes()).map_err(failure),
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let (name, config) = resolve(&cli.command)?;
    if let Some(w) = config.workers {
        if w == 0 {
            return Err(CliError::Usage("workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(failure)?;
    }
    let (text, passed) = match name {
        "simulate" => (run_simulate(&config)?, true),
        "verify" => run_verify(&config)?,
        "estimate" => (run_estimate(&config)?, true),
        _ => (run_oracle(&config)?, true),
    };
    write_output(config.out.as_deref(), &text)?;
    let manifest = serde_json::json!({
        "command": name,
        "config": config,
        "seed": config.seed,
        "versions": {
            "crw": env!("CARGO_PKG_VERSION"),
            "coalescing_walks": coalescing_walks::VERSION,
        },
        "started_unix": started_unix,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    let manifest = to_json(&manifest)?;
    match &config.out {
        Some(out) => std::fs::write(manifest_path(out), manifest).map_err(failure)?,
        None => eprint!("{manifest}"),
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "suite {} did not pass",
            config.suite.unwrap_or_default()
        )))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crw: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
