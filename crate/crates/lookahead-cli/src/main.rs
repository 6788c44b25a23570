//! `lookahead`: configuration-driven experiment runner for retraining
//! dynamics, collective steering, and their alignment diagnostics.
//!
//! Usage: `lookahead <experiment> --config <path> --out <dir> [--jobs N]
//! [--seed S]`. Logging is controlled by the `LOOKAHEAD_LOG` environment
//! variable (error, warn, info, debug).

mod config;
mod data;
mod experiments;
mod output;

use anyhow::{bail, Result};
use clap::Parser;

use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(
    name = "lookahead",
    about = "Simulations of retraining platforms facing strategic populations"
)]
struct Cli {
    /// Experiment to run: levelk-dynamics, alignment-sweep, size-sweep,
    /// fixed-strategy-sweep, triangle, or validate.
    experiment: String,

    /// JSON configuration; omitted fields take documented defaults
    /// (docs/config.schema.json).
    #[arg(long)]
    config: Option<std::path::PathBuf>,

    /// Output directory for CSVs and the run manifest.
    #[arg(long)]
    out: std::path::PathBuf,

    /// Maximum concurrent sweep points.
    #[arg(long)]
    jobs: Option<usize>,

    /// Overrides the config's data seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LOOKAHEAD_LOG")).init();
    let code = match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            2
        }
    };
    std::process::exit(code);
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    if !config::EXPERIMENTS.contains(&cli.experiment.as_str()) {
        bail!(
            "unknown experiment '{}'; expected one of {:?}",
            cli.experiment,
            config::EXPERIMENTS
        );
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(declared) = &cfg.experiment {
        if declared != &cli.experiment {
            bail!(
                "config declares experiment '{declared}' but the command line selected '{}'",
                cli.experiment
            );
        }
    }
    cfg.experiment = Some(cli.experiment.clone());
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
    }
    cfg.validate()?;

    let jobs = cli.jobs.unwrap_or(1).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| anyhow::anyhow!("building thread pool: {e}"))?;
    log::info!("running {} with {jobs} job(s)", cli.experiment);
    pool.install(|| experiments::run(&cli.experiment, &cfg, &cli.out))
}
