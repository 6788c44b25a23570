//! One module per experiment; `run` dispatches on the CLI-selected name.
//! Each experiment writes its CSV outputs plus a manifest into the output
//! directory and returns the process exit code.

pub mod alignment;
pub mod fixed_strategy;
pub mod levelk;
pub mod size_sweep;
pub mod triangle;
pub mod validate;

use anyhow::{bail, Result};

use crate::config::ExperimentConfig;

pub fn run(experiment: &str, cfg: &ExperimentConfig, out_dir: &std::path::Path) -> Result<i32> {
    match experiment {
        "levelk-dynamics" => levelk::run(cfg, out_dir),
        "alignment-sweep" => alignment::run(cfg, out_dir),
        "size-sweep" => size_sweep::run(cfg, out_dir),
        "fixed-strategy-sweep" => fixed_strategy::run(cfg, out_dir),
        "triangle" => triangle::run(cfg, out_dir),
        "validate" => validate::run(cfg, out_dir),
        other => bail!("unknown experiment '{other}'"),
    }
}
