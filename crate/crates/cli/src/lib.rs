//! Experiment harness for the `fors` sampling library.
//!
//! `fors --config run.toml` validates the config, runs one experiment and
//! writes `samples.csv` plus `summary.json` to the output directory.
//! Exit codes: 0 success, 1 runtime failure (a summary with
//! `status = "failed"` is still written), 2 configuration error.

pub mod config;
pub mod output;
pub mod report;
pub mod runner;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;

use crate::config::ExperimentConfig;
use crate::report::{RunReport, RunStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Sampler(#[from] fors_core::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "fors", version, about = "Run a first-order rejection sampling experiment")]
pub struct Args {
    /// Experiment config (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Overrides the config's output directory (default `out`).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Treat step-size and prox-anchor violations as errors.
    #[arg(long)]
    pub strict: bool,
}

/// A config with command-line overrides applied and checked.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub step: Option<runner::StepSize>,
    pub out_dir: PathBuf,
}

pub fn prepare(args: &Args) -> Result<Prepared, CliError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.strict |= args.strict;
    config.validate()?;
    let step = runner::resolve_step_size(&config)?;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Prepared { config, step, out_dir })
}

/// Runs a prepared experiment and writes its files; the returned report is
/// what `summary.json` holds.
pub fn execute(prepared: &Prepared, workers: Option<usize>) -> Result<RunReport, CliError> {
    let out_dir = &prepared.out_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Io(format!("worker pool: {e}")))?;
    let mut report = RunReport::new(prepared.config.clone());
    report.timing.workers = pool.current_num_threads();
    let start = Instant::now();
    let result = pool.install(|| runner::execute(&prepared.config, prepared.step, out_dir));
    report.timing.wall_clock_seconds = start.elapsed().as_secs_f64();
    let outcome = result.and_then(|artifacts| {
        if let Some(samples) = &artifacts.samples {
            output::write_samples_csv(&out_dir.join("samples.csv"), samples)?;
        }
        report.counts = artifacts.counts;
        report.metrics = artifacts.metrics;
        report.statistics = artifacts.stats.0;
        report.table = artifacts.table;
        Ok(())
    });
    if let Err(e) = &outcome {
        report.status = RunStatus::Failed;
        report.error = Some(e.to_string());
    }
    output::write_json(&summary_path(out_dir), &report)?;
    outcome.map(|()| report)
}

pub fn summary_path(out_dir: &Path) -> PathBuf {
    out_dir.join("summary.json")
}

/// The whole command: returns the process exit code.
pub fn run(args: &Args) -> i32 {
    let prepared = match prepare(args) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("fors: {e}");
            return e.exit_code();
        }
    };
    match execute(&prepared, args.workers) {
        Ok(report) => {
            log::info!(
                "{} finished in {:.2}s; summary at {}",
                report.config.kind.name(),
                report.timing.wall_clock_seconds,
                summary_path(&prepared.out_dir).display()
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("fors: {e}");
            e.exit_code()
        }
    }
}
