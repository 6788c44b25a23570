//! Size sweep: utility of the optimal size-aware collective strategy as a
//! function of collective size.

use std::sync::Arc;

use anyhow::{Context, Result};
use rayon::prelude::*;

use lookahead::collective::{optimize_strategy, FamilyContext, ShiftFamily};
use lookahead::loss::{Loss, RegularizedLogistic};
use lookahead::utility::AlignmentRegularized;
use nalgebra::DVector;

use crate::config::ExperimentConfig;
use crate::data::{feature_index, resolve_data};
use crate::output::{fmt, RunWriter};

pub fn run(cfg: &ExperimentConfig, out_dir: &std::path::Path) -> Result<i32> {
    let mut writer = RunWriter::new(out_dir)?;
    let (base, names, standardization) = resolve_data(&cfg.data)?;
    let loss: Arc<dyn Loss> = Arc::new(
        RegularizedLogistic::with_options(cfg.loss.lambda, true, cfg.loss.beta)
            .map_err(anyhow::Error::from)?,
    );
    let solver = cfg.solver.to_solver()?;
    let optimizer = cfg.optimizer.to_optimizer();
    let (lo, hi) = cfg.sweep.eta_bounds;

    let feature = cfg
        .population
        .shift_features
        .first()
        .context("size sweep needs at least one shift feature")?;
    let idx = feature_index(&names, feature)?;
    let mut direction = DVector::zeros(base.dim());
    direction[idx] = 1.0;
    let utility = AlignmentRegularized::new(loss.clone(), cfg.utility.lambda, cfg.utility.sign)
        .map_err(anyhow::Error::from)?;

    let results: Vec<(f64, f64)> = cfg
        .sweep
        .alphas
        .par_iter()
        .map(|&alpha| -> Result<(f64, f64)> {
            let family = ShiftFamily::new(vec![direction.clone()])
                .and_then(|f| f.with_bounds(vec![(lo, hi)]))
                .map_err(anyhow::Error::from)?;
            let ctx = FamilyContext::new(alpha, &base, &base, loss.as_ref(), &utility, &solver);
            let mut best = optimize_strategy(&family, None, &ctx, &optimizer)
                .with_context(|| format!("size-aware optimization at alpha {alpha}"))?;
            for start in [lo, hi] {
                let candidate = optimize_strategy(
                    &family,
                    Some(DVector::from_element(1, start)),
                    &ctx,
                    &optimizer,
                )?;
                if candidate.utility > best.utility {
                    best = candidate;
                }
            }
            log::debug!("alpha={alpha}: eta={}, U={}", best.eta[0], best.utility);
            Ok((alpha, best.utility))
        })
        .collect::<Result<_>>()?;

    let mut sorted = results;
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let rows: Vec<Vec<String>> = sorted
        .into_iter()
        .map(|(alpha, u)| vec![fmt(alpha), fmt(u)])
        .collect();
    writer.csv("size_sweep.csv", &["alpha", "collective_utility"], &rows)?;
    writer.finish(
        "size-sweep",
        cfg,
        cfg.data.seed,
        standardization,
        serde_json::Value::Null,
        false,
    )?;
    Ok(0)
}
