//! CSV and manifest emission. Floats are written with Rust's shortest
//! round-trip formatting; rows are sorted by sweep key before writing so the
//! bytes are independent of job scheduling.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Formats a float with shortest round-trip representation.
pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

/// Writes one CSV file with a header and pre-sorted rows, UTF-8, `\n` line
/// endings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))?;
    file.write_all(out.as_bytes())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub experiment: &'a str,
    pub seed: u64,
    pub library_version: &'a str,
    pub wall_time_seconds: f64,
    pub config: &'a ExperimentConfig,
    pub outputs: Vec<String>,
    /// Standardization transform when data came from a CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardization: Option<crate::data::Standardization>,
    /// Derived quantities a reader needs to recompute the CSVs (for example
    /// the target model of the fixed-strategy sweep).
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub derived: serde_json::Value,
    /// True when some requested output could not be produced.
    pub partial: bool,
}

pub struct RunWriter {
    pub out_dir: PathBuf,
    started: Instant,
    outputs: Vec<String>,
}

impl RunWriter {
    pub fn new(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(RunWriter {
            out_dir: out_dir.to_path_buf(),
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.out_dir.join(name);
        write_csv(&path, header, rows)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn finish(
        self,
        experiment: &str,
        config: &ExperimentConfig,
        seed: u64,
        standardization: Option<crate::data::Standardization>,
        derived: serde_json::Value,
        partial: bool,
    ) -> Result<()> {
        let manifest = Manifest {
            experiment,
            seed,
            library_version: env!("CARGO_PKG_VERSION"),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            config,
            outputs: self.outputs,
            standardization,
            derived,
            partial,
        };
        let path = self.out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
