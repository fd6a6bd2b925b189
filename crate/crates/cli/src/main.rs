//! `aiflab` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numeric failure. Errors
//! from the library are reported on stderr as one JSON object.

mod commands;
mod json;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aiflab::AifError;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "aiflab", version, about = "Adversarial influence functions for M-estimators")]
#[command(args_override_self = true)]
pub struct Cli {
    /// key=value file; its entries act as flags of the subcommand, and flags
    /// given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Debug logging, and print the resolved configuration to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the estimating equations and print the estimate.
    Solve(EstimatorArgs),
    /// AIF and optimal attack direction of an estimator on a dataset.
    Aif(AifArgs),
    /// Build the optimal perturbation for a budget and check it by re-solving.
    Attack(AttackArgs),
    /// AIF of a robust regression scheme (CSV: q covariates, then y).
    RegressAif(RegressArgs),
    /// Mean AIF per (scheme, K) over several regression datasets.
    Sweep(SweepArgs),
    /// Location-scale AIF on data, or its population limit under a density.
    LsAif(LsAifArgs),
    /// Design an AIF-optimal location-scale estimator.
    Design(DesignArgs),
    /// Minimal AIF as a function of the IF bound.
    Frontier(FrontierArgs),
    /// Run a reproducible experiment and write its tables.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    /// mean, meanstd, huber2, or a regression scheme (ols, huber, mallows,
    /// schweppe) on q covariates followed by the response.
    #[arg(long)]
    pub estimator: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Clip level for huber2 and the regression schemes.
    #[arg(long = "K", alias = "k", default_value_t = 1.5)]
    pub k: f64,
    /// Base density fixing huber2's scale constant.
    #[arg(long, default_value = "normal")]
    pub density: String,
    /// Skip the first line of the CSV (detected automatically otherwise).
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Args)]
pub struct AifArgs {
    #[command(flatten)]
    pub est: EstimatorArgs,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Evaluate at this estimate (comma-separated) instead of solving.
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    /// Budget used for the attack listed in the output.
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub aif: AifArgs,
    /// Write the perturbed data (one point per row) here.
    #[arg(long, value_name = "CSV")]
    pub emit_attack: Option<PathBuf>,
    /// Budgets for the first-order check.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.001,0.0001")]
    pub check: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "huber")]
    pub scheme: String,
    #[arg(long = "K", alias = "k", default_value_t = 1.345)]
    pub k: f64,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Regression datasets; repeat the flag or separate with commas.
    #[arg(long, value_delimiter = ',', required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "ols,huber,mallows,schweppe")]
    pub schemes: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub k_grid: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Args)]
pub struct LsAifArgs {
    /// meanstd or huber2.
    #[arg(long, default_value = "huber2")]
    pub estimator: String,
    #[arg(long = "K", alias = "k", default_value_t = 1.5)]
    pub k: f64,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// Population AIF under `--density` instead of a dataset.
    #[arg(long)]
    pub population: bool,
    #[arg(long, default_value = "normal")]
    pub density: String,
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// normal, laplace or table:<csv>.
    #[arg(long, default_value = "laplace")]
    pub density: String,
    /// Overall IF bound; unconstrained design when absent.
    #[arg(long)]
    pub xi: Option<f64>,
    /// Location part of the bound; chosen to minimise the AIF when absent.
    #[arg(long)]
    pub xi1: Option<f64>,
    /// uncentered or fisher.
    #[arg(long, default_value = "uncentered")]
    pub convention: String,
    #[arg(long, default_value_t = 16)]
    pub split_resolution: usize,
    /// Write the tabulated ψ functions, headed by the KKT report.
    #[arg(long, value_name = "CSV")]
    pub emit_psi: Option<PathBuf>,
    #[arg(long, default_value_t = 2048)]
    pub knots: usize,
}

#[derive(Debug, Args)]
pub struct FrontierArgs {
    #[arg(long, default_value = "laplace")]
    pub density: String,
    /// Explicit IF bounds; otherwise `--points` values over [xi-min, xi-max].
    #[arg(long, value_delimiter = ',')]
    pub xi_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2.5)]
    pub xi_min: f64,
    #[arg(long, default_value_t = 20.0)]
    pub xi_max: f64,
    #[arg(long, default_value_t = 30)]
    pub points: usize,
    #[arg(long, default_value = "uncentered")]
    pub convention: String,
    #[arg(long, default_value_t = 16)]
    pub split_resolution: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// tradeoff, regression_sweep or convergence.
    #[arg(long)]
    pub name: String,
    /// desk or full.
    #[arg(long, default_value = "desk")]
    pub scale: String,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Further overrides, key=value (e.g. n_replicates=5).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

/// Failures carried up to `main`.
pub enum Failure {
    Usage(String),
    Lib(AifError),
}

impl From<AifError> for Failure {
    fn from(e: AifError) -> Self {
        Failure::Lib(e)
    }
}

/// Turns `key=value` lines into flags placed right after the subcommand, so
/// that later command-line flags override them.
fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (k, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(k + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| Failure::Lib(AifError::Input(format!("cannot read config {path}: {e}"))))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("{path}:{}: expected key=value, got {line:?}", n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match value {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            _ => {
                extra.push(format!("--{key}"));
                extra.push(value.to_string());
            }
        }
    }
    // The subcommand is the first argument that is not a global flag.
    let mut at = 1;
    while at < strs.len() {
        match strs[at].as_str() {
            "--config" => at += 2,
            s if s.starts_with("--config=") || s == "--verbose" || s == "-v" => at += 1,
            _ => break,
        }
    }
    let mut out: Vec<OsString> = args[..(at + 1).min(args.len())].to_vec();
    out.extend(extra.into_iter().map(OsString::from));
    out.extend(args[(at + 1).min(args.len())..].iter().cloned());
    Ok(out)
}

fn init_logging(verbose: bool) {
    let level = if verbose {
        tracing::Level::DEBUG
    } else {
        tracing::Level::WARN
    };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .try_init();
}

fn init_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("AIFLAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::Usage(format!("AIFLAB_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(args: Vec<OsString>) -> Result<(), Failure> {
    let args = merge_config(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return Ok(());
            }
            return Err(Failure::Usage(e.to_string()));
        }
    };
    init_logging(cli.verbose);
    init_threads()?;
    if cli.verbose {
        eprintln!("resolved configuration: {cli:#?}");
    }
    commands::dispatch(&cli.command)
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprint!("{msg}");
            if !msg.ends_with('\n') {
                eprintln!();
            }
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            let payload = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{}", json::to_string_compact(&payload));
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
