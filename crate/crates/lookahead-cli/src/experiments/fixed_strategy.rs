//! Fixed-strategy sweep: scale pre-optimized size-aware strategies across
//! collective sizes and report the scaling-alignment metric next to the
//! realized collective utility.
//!
//! The collective is the label-1 sub-population; its strategy translates the
//! misreported features along the label-0 mean direction. The target model
//! defaults to the equilibrium produced by strength 0.5 at size 0.3.

use std::sync::Arc;

use anyhow::{Context, Result};
use rayon::prelude::*;

use lookahead::collective::{
    alignment_psi, equilibrium_model, optimize_strategy, FamilyContext, ShiftFamily,
};
use lookahead::loss::{Loss, RegularizedLogistic};
use lookahead::objective::expected_objective;
use lookahead::population::{mixture, Model};
use lookahead::strategies::{label0_mean_direction, ParametricShift, Strategy};
use lookahead::utility::TargetModel;
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

    let strategic: Vec<usize> = cfg
        .population
        .shift_features
        .iter()
        .map(|f| feature_index(&names, f))
        .collect::<Result<_>>()?;
    let direction =
        label0_mean_direction(&base, &strategic).map_err(anyhow::Error::from)?;
    let collective = base
        .conditional_on_label(1.0)
        .map_err(anyhow::Error::from)?;

    // Target model: produced by strength 0.5 at size 0.3 unless configured.
    let theta_target = match &cfg.utility.theta_target {
        Some(v) => Model::from_slice(v),
        None => {
            let probe = ParametricShift::along(0.5, direction.clone());
            equilibrium_model(&probe, 0.3, &collective, &base, loss.as_ref(), &solver)
                .map_err(anyhow::Error::from)?
        }
    };
    let utility = TargetModel::new(theta_target.clone());

    // Pre-optimize one strategy per assumed size.
    let family = ShiftFamily::new(vec![direction.clone()])
        .and_then(|f| f.with_bounds(vec![(lo, hi)]))
        .map_err(anyhow::Error::from)?
        .with_start(DVector::from_element(1, 0.5));
    let mut strategies: Vec<(String, f64)> = Vec::new();
    for &alpha0 in &cfg.sweep.strategy_alphas {
        let ctx = FamilyContext::new(alpha0, &collective, &base, loss.as_ref(), &utility, &solver);
        let out = optimize_strategy(&family, None, &ctx, &optimizer)
            .with_context(|| format!("optimizing strategy for assumed size {alpha0}"))?;
        log::info!(
            "strategy for alpha0={alpha0}: eta={}, U={}",
            out.eta[0],
            out.utility
        );
        strategies.push((format!("h_sharp_{alpha0}"), out.eta[0]));
    }

    let mut points: Vec<(String, f64, f64)> = Vec::new();
    for (id, eta) in &strategies {
        for &alpha in &cfg.sweep.alphas {
            points.push((id.clone(), *eta, alpha));
        }
    }

    let results: Vec<(String, f64, f64, f64)> = points
        .par_iter()
        .map(|(id, eta, alpha)| -> Result<(String, f64, f64, f64)> {
            let strategy = ParametricShift::along(*eta, direction.clone());
            let theta =
                equilibrium_model(&strategy, *alpha, &collective, &base, loss.as_ref(), &solver)
                    .map_err(anyhow::Error::from)?;
            let d_h = strategy
                .apply(&collective, &theta)
                .map_err(anyhow::Error::from)?;
            let mix = if *alpha < 1.0 {
                mixture(&[(*alpha, &d_h), (1.0 - *alpha, &base)]).map_err(anyhow::Error::from)?
            } else {
                d_h.clone()
            };
            let psi =
                alignment_psi(&d_h, &mix, &theta, loss.as_ref(), &utility)
                    .map_err(anyhow::Error::from)?;
            let u = expected_objective(&d_h, &utility, &theta);
            Ok((id.clone(), *alpha, psi, u))
        })
        .collect::<Result<_>>()?;

    let mut sorted = results;
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
    let rows: Vec<Vec<String>> = sorted
        .into_iter()
        .map(|(id, alpha, psi, u)| vec![id, fmt(alpha), fmt(psi), fmt(u)])
        .collect();
    writer.csv(
        "fixed_strategy_sweep.csv",
        &["strategy_id", "alpha", "psi", "utility"],
        &rows,
    )?;
    let derived = serde_json::json!({
        "theta_target": theta_target.theta.iter().copied().collect::<Vec<f64>>(),
        "shift_direction": direction.iter().copied().collect::<Vec<f64>>(),
        "optimized_etas": strategies,
    });
    writer.finish(
        "fixed-strategy-sweep",
        cfg,
        cfg.data.seed,
        standardization,
        derived,
        false,
    )?;
    Ok(0)
}
