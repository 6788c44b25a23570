//! Retraining dynamics under mixed level-k populations: emits per-round
//! iterate gaps for each configured mixture.

use std::sync::Arc;

use anyhow::{Context, Result};
use rayon::prelude::*;

use lookahead::dynamics::repeated_rm;
use lookahead::loss::RegularizedLogistic;
use lookahead::population::{Model, PopulationMix, RemainderBehavior};
use lookahead::strategies::{QuadraticBestResponse, Strategy};
use nalgebra::DVector;

use crate::config::ExperimentConfig;
use crate::data::{feature_index, resolve_data};
use crate::output::{fmt, RunWriter};

pub fn run(cfg: &ExperimentConfig, out_dir: &std::path::Path) -> Result<i32> {
    let mut writer = RunWriter::new(out_dir)?;
    let (base, names, standardization) = resolve_data(&cfg.data)?;
    let strategic: Vec<usize> = cfg
        .population
        .strategic_features
        .iter()
        .map(|f| feature_index(&names, f))
        .collect::<Result<_>>()?;
    let loss = RegularizedLogistic::with_options(cfg.loss.lambda, true, cfg.loss.beta)
        .map_err(anyhow::Error::from)?;
    let level_one: Arc<dyn Strategy> = Arc::new(
        QuadraticBestResponse::new(cfg.utility.epsilon, strategic).map_err(anyhow::Error::from)?,
    );
    let solver = cfg.solver.to_solver()?;
    let p = base.dim() + 1;
    let theta0 = Model::new(DVector::zeros(p));

    let traces: Vec<(String, Vec<f64>)> = cfg
        .population
        .mixtures
        .par_iter()
        .map(|spec| -> Result<(String, Vec<f64>)> {
            let mix = PopulationMix {
                base: base.clone(),
                levelk_weights: spec.levelk.clone(),
                collective: None,
                remainder_behavior: RemainderBehavior::NonStrategic,
                level_one: Some(level_one.clone()),
            };
            let trace = repeated_rm(
                &mix,
                &loss,
                &theta0,
                cfg.sweep.rounds,
                cfg.sweep.gap_tol,
                &solver,
            )
            .with_context(|| format!("mixture '{}'", spec.id))?;
            log::info!(
                "mixture {}: {} rounds, converged = {}",
                spec.id,
                trace.iterate_gaps.len(),
                trace.converged
            );
            Ok((spec.id.clone(), trace.iterate_gaps))
        })
        .collect::<Result<_>>()?;

    let mut keyed: Vec<(String, usize, f64)> = Vec::new();
    for (id, gaps) in &traces {
        for (t, gap) in gaps.iter().enumerate() {
            keyed.push((id.clone(), t, *gap));
        }
    }
    keyed.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let rows: Vec<Vec<String>> = keyed
        .into_iter()
        .map(|(id, t, gap)| vec![id, t.to_string(), fmt(gap)])
        .collect();
    writer.csv("levelk_dynamics.csv", &["mixture_id", "t", "iterate_gap"], &rows)?;
    writer.finish(
        "levelk-dynamics",
        cfg,
        cfg.data.seed,
        standardization,
        serde_json::Value::Null,
        false,
    )?;
    Ok(0)
}
