//! Command-line front end.
//!
//! Each subcommand reads the run configuration, applies flag overrides,
//! computes a result and emits one JSON record (or CSV tables). With `--out`
//! the artifacts go to files and stdout gets a one-line summary; without it
//! the record goes to stdout and the summary to stderr.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 failed verification.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{EnvelopeChoice, RunConfig};
use crate::dirichlet::{estimate_killed_kernel, Ball};
use crate::duhamel::{duhamel_sum, SpaceTimeGrid};
use crate::envelopes::{Envelope, GaussianEnvelope, NegativeKernelEnvelope, PositiveKernelEnvelope};
use crate::error::{Error, Result};
use crate::fkmc::{estimate_bridge_ratio, estimate_green, estimate_kernel, estimate_survival};
use crate::pde::{richardson_1d, richardson_radial};
use crate::rng::derive_seed;
use crate::suites::{run_suite, with_threads, SuiteOptions, SUITES};
use crate::verify::{fit_sandwich, regime_scan, Estimate, ScanEstimator};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "SCHRO_THREADS";

#[derive(Debug, Parser)]
#[command(name = "schro", version, about = "Heat kernels of Schrödinger operators with decaying potentials")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for JSON and CSV artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to SCHRO_THREADS, then to the core count).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelMethod {
    Fkmc,
    Pde,
}

#[derive(Debug, Args)]
struct PointArgs {
    #[arg(long)]
    t: f64,
    /// Comma-separated coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    y: Vec<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Heat kernel p(t,x,y).
    Kernel {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, value_enum, default_value_t = KernelMethod::Fkmc)]
        method: KernelMethod,
    },
    /// Survival function u(t,x) = ∫ p(t,x,y) dy.
    Survival {
        #[arg(long)]
        t: f64,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
    },
    /// Green function G(x,y) in d ≥ 2.
    Green {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Vec<f64>,
    },
    /// Free kernel killed on leaving the ball of the [dirichlet] section.
    Dirichlet {
        #[command(flatten)]
        point: PointArgs,
    },
    /// Duhamel series of a nonpositive potential on the [duhamel] grid.
    Duhamel,
    /// A named verification suite, or a sandwich fit on the [grid] section.
    Verify {
        /// Suite name or `all`; omit to fit the configured grid.
        #[arg(long)]
        suite: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        /// Overrides every Monte Carlo path count of the suites.
        #[arg(long)]
        paths: Option<u64>,
    },
    /// Regime labels and branch switch over the [grid] section.
    Scan {
        /// Bridge steps per unit time (at least mc.n_steps).
        #[arg(long, default_value_t = 8.0)]
        steps_per_time: f64,
    },
    /// The closed-form oracle suite.
    Selftest,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Kernel { .. } => "kernel",
            Command::Survival { .. } => "survival",
            Command::Green { .. } => "green",
            Command::Dirichlet { .. } => "dirichlet",
            Command::Duhamel => "duhamel",
            Command::Verify { .. } => "verify",
            Command::Scan { .. } => "scan",
            Command::Selftest => "selftest",
        }
    }
}

/// What a command produced before serialization.
struct Outcome {
    result: Value,
    tables: Vec<(String, String)>,
    summary: String,
    pass: bool,
}

impl Outcome {
    fn ok(result: Value, summary: String) -> Self {
        Self {
            result,
            tables: vec![],
            summary,
            pass: true,
        }
    }
}

/// Parses `args` (program name first) and runs the command against the process streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(pass) => {
            if pass {
                EXIT_OK
            } else {
                EXIT_FAILED
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn threads(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a thread count, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    let n_threads = threads(cli.threads)?;
    let outcome = with_threads(n_threads, || dispatch(&cli.command, &cfg))??;

    let record = record(cli.command.name(), cfg.seed(), &outcome.result);
    match &cli.out {
        Some(dir) => {
            write_artifacts(dir, cli.command.name(), &record, &outcome.tables)?;
            writeln!(out, "{}", outcome.summary)?;
        }
        None => {
            match cli.format {
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&record)?)?,
                Format::Csv => out.write_all(csv_output(&outcome)?.as_bytes())?,
            }
            writeln!(err, "{}", outcome.summary)?;
        }
    }
    Ok(outcome.pass)
}

fn record(command: &str, seed: u64, result: &Value) -> Value {
    json!({
        "command": command,
        "seed": seed,
        "timestamp": chrono::Utc::now().to_rfc3339(),
        "version": env!("CARGO_PKG_VERSION"),
        "result": result,
    })
}

/// Removes the timestamp so two records of the same run compare byte for byte.
pub fn strip_timestamp(text: &str) -> Result<String> {
    let mut value: Value = serde_json::from_str(text)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("timestamp");
    }
    Ok(serde_json::to_string_pretty(&value)?)
}

fn write_artifacts(dir: &Path, command: &str, record: &Value, tables: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{command}.json")), serde_json::to_string_pretty(record)? + "\n")?;
    for (stem, contents) in tables {
        std::fs::write(dir.join(format!("{stem}.csv")), contents)?;
    }
    Ok(())
}

/// The tables if there are any, else the scalar fields of the result as one row.
fn csv_output(outcome: &Outcome) -> Result<String> {
    if !outcome.tables.is_empty() {
        let mut text = String::new();
        for (stem, contents) in &outcome.tables {
            if outcome.tables.len() > 1 {
                text.push_str(&format!("# {stem}\n"));
            }
            text.push_str(contents);
        }
        return Ok(text);
    }
    let mut flat = Map::new();
    flatten("", &outcome.result, &mut flat);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(flat.keys())?;
    w.write_record(flat.values().map(|v| match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }))?;
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv output is utf-8"))
}

fn flatten(prefix: &str, value: &Value, out: &mut Map<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Array(_) => {}
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<Outcome> {
    match command {
        Command::Kernel { point, method } => kernel(cfg, point, *method),
        Command::Survival { t, x } => {
            let e = estimate_survival(&cfg.potential()?, *t, x, &cfg.mc())?;
            let summary = format!("survival u({t}, x) = {:.6e} ± {:.1e}", e.value, e.stderr);
            Ok(Outcome::ok(to_value(&e)?, summary))
        }
        Command::Green { x, y } => {
            let g = estimate_green(&cfg.potential()?, x, y, &cfg.mc(), &cfg.green)?;
            let summary = format!("green G(x, y) = {:.6e} ± {:.1e}", g.estimate.value, g.estimate.stderr);
            Ok(Outcome::ok(to_value(&g)?, summary))
        }
        Command::Dirichlet { point } => {
            let ball = Ball::new(cfg.dirichlet.center.clone(), cfg.dirichlet.radius)?;
            let e = estimate_killed_kernel(point.t, &point.x, &point.y, &ball, &cfg.mc())?;
            let summary = format!("dirichlet kernel = {:.6e} ± {:.1e}", e.value, e.stderr);
            Ok(Outcome::ok(to_value(&e)?, summary))
        }
        Command::Duhamel => duhamel(cfg),
        Command::Verify {
            suite,
            alpha,
            dim,
            paths,
        } => match suite {
            Some(name) => verify_suites(cfg, name, *alpha, *dim, *paths),
            None => verify_grid(cfg),
        },
        Command::Scan { steps_per_time } => scan(cfg, *steps_per_time),
        Command::Selftest => verify_suites(cfg, "oracles", None, None, None),
    }
}

fn kernel(cfg: &RunConfig, point: &PointArgs, method: KernelMethod) -> Result<Outcome> {
    let pot = cfg.potential()?;
    let (t, x, y) = (point.t, &point.x, &point.y);
    let e = match method {
        KernelMethod::Fkmc => estimate_kernel(&pot, t, x, y, &cfg.mc())?,
        KernelMethod::Pde => {
            let v = if pot.dim() == 1 {
                if x.len() != 1 || y.len() != 1 {
                    return Err(Error::Config("x and y need one coordinate in d = 1".into()));
                }
                richardson_1d(&pot, t, x[0], &[y[0]], &cfg.pde)?
            } else {
                if x.len() != pot.dim() || x.iter().any(|&c| c != 0.0) {
                    return Err(Error::Unsupported(
                        "the radial solver needs x at the origin in d >= 2".into(),
                    ));
                }
                richardson_radial(&pot, t, &[crate::potentials::norm(y)], &cfg.pde)?
            };
            let v = &v[0];
            pde_estimate(v.value, v.error)
        }
    };
    let summary = format!("kernel p({t}, x, y) = {:.6e} ± {:.1e}", e.value, e.stderr);
    Ok(Outcome::ok(to_value(&e)?, summary))
}

/// Finite-difference value reported in the estimate record; the Richardson
/// error takes the place of the standard error.
fn pde_estimate(value: f64, error: f64) -> crate::fkmc::KernelEstimate {
    crate::fkmc::KernelEstimate {
        value,
        stderr: error,
        n_paths: 0,
        n_steps: 0,
        bias_probe: None,
        method: crate::fkmc::Method::FiniteDifference,
    }
}

fn duhamel(cfg: &RunConfig) -> Result<Outcome> {
    let pot = cfg.potential()?;
    let grid = SpaceTimeGrid::new(&cfg.duhamel)?;
    let series = duhamel_sum(&pot, &grid, 40, 1e-10)?;
    let (lo, hi) = series
        .total
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut result = to_value(&series)?;
    result["min_ratio"] = json!(lo);
    result["max_ratio"] = json!(hi);
    let status = if series.diverged {
        "diverged"
    } else if series.converged {
        "converged"
    } else {
        "unresolved"
    };
    let summary = format!(
        "duhamel {status}: r̂ = {:.4}, {} terms, p/q in [{lo:.5}, {hi:.5}]",
        series.r_hat,
        series.term_sups.len()
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "term_sup"])?;
    for (n, s) in series.term_sups.iter().enumerate() {
        w.write_record([n.to_string(), s.to_string()])?;
    }
    let table = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("csv output is utf-8");
    Ok(Outcome {
        result,
        tables: vec![("duhamel_terms".into(), table)],
        summary,
        pass: !series.diverged,
    })
}

fn verify_suites(cfg: &RunConfig, name: &str, alpha: Option<f64>, dim: Option<usize>, paths: Option<u64>) -> Result<Outcome> {
    let defaults = SuiteOptions::default();
    let opts = SuiteOptions {
        seed: cfg.seed(),
        alpha: alpha.unwrap_or(defaults.alpha),
        dim: dim.unwrap_or(defaults.dim),
        paths,
    };
    let names: Vec<&str> = if name == "all" { SUITES.to_vec() } else { vec![name] };
    let mut outcomes = Vec::new();
    for n in names {
        outcomes.push(run_suite(n, &opts)?);
    }
    let pass = outcomes.iter().all(|o| o.pass);
    let summary = outcomes.iter().map(|o| o.summary()).collect::<Vec<_>>().join("\n");
    let tables = outcomes.iter().flat_map(|o| o.tables.clone()).collect();
    Ok(Outcome {
        result: json!({ "pass": pass, "suites": outcomes }),
        tables,
        summary,
        pass,
    })
}

fn envelope(cfg: &RunConfig, alpha: f64, dim: usize) -> Box<dyn Envelope> {
    match cfg.verify.envelope {
        EnvelopeChoice::Positive => Box::new(PositiveKernelEnvelope { alpha, dim }),
        EnvelopeChoice::Negative => Box::new(NegativeKernelEnvelope { alpha, dim }),
        EnvelopeChoice::Gaussian => Box::new(GaussianEnvelope { dim }),
    }
}

fn configured_grid(cfg: &RunConfig, dim: usize) -> Result<crate::envelopes::SampleGrid> {
    cfg.grid
        .as_ref()
        .ok_or_else(|| Error::Config("missing [grid] section".into()))?
        .build(dim)
}

fn verify_grid(cfg: &RunConfig) -> Result<Outcome> {
    let pot = cfg.potential()?;
    let grid = configured_grid(cfg, pot.dim())?;
    let mc = cfg.mc();
    let estimates = grid
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let e = estimate_bridge_ratio(
                &pot,
                p.t,
                &p.x,
                &p.y,
                &crate::fkmc::McConfig {
                    seed: derive_seed(mc.seed, i as u64),
                    ..mc.clone()
                },
            )?;
            Ok(Estimate::from_ratio(p.clone(), e.value, e.stderr))
        })
        .collect::<Result<Vec<_>>>()?;
    let env = envelope(cfg, pot.alpha(), pot.dim());
    let report = fit_sandwich(&estimates, env.as_ref(), &cfg.verify.fit())?;
    let summary = format!(
        "[{}] {} fit over {} points: band {:.3} vs ceiling {}",
        if report.pass { "PASS" } else { "FAIL" },
        env.name(),
        estimates.len(),
        report.band,
        report.band_ceiling
    );
    let mut table = Vec::new();
    report.write_csv(&mut table)?;
    Ok(Outcome {
        result: to_value(&report)?,
        tables: vec![("verify".into(), String::from_utf8(table).expect("csv output is utf-8"))],
        summary,
        pass: report.pass,
    })
}

fn scan(cfg: &RunConfig, steps_per_time: f64) -> Result<Outcome> {
    let pot = cfg.potential()?;
    let grid = configured_grid(cfg, pot.dim())?;
    let estimator = ScanEstimator::Fkmc {
        mc: cfg.mc(),
        steps_per_time,
    };
    let scan = regime_scan(&pot, pot.alpha(), &grid, &estimator)?;
    let summary = match scan.switch_time {
        Some(s) => format!("scan: branch switch at t = {s:.2} (t0 = {:.2})", scan.t0),
        None => format!("scan: no branch switch detected (t0 = {:.2})", scan.t0),
    };
    let mut table = Vec::new();
    scan.write_csv(&mut table)?;
    Ok(Outcome {
        result: to_value(&scan)?,
        tables: vec![("scan".into(), String::from_utf8(table).expect("csv output is utf-8"))],
        summary,
        pass: true,
    })
}
