//! Alignment sweep: for a grid of alignment knobs, compare the alignment
//! term against the realized benefit of coordination for single-feature
//! misreporting strategies.

use std::sync::Arc;

use anyhow::{Context, Result};
use rayon::prelude::*;

use lookahead::collective::{
    alignment_phi, family_utility, optimize_strategy, selfish_equilibrium, FamilyContext,
    ShiftFamily, StrategyFamily,
};
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

    let mut points: Vec<(String, f64)> = Vec::new();
    for feature in &cfg.population.shift_features {
        for &lambda in &cfg.sweep.lambdas {
            points.push((feature.clone(), lambda));
        }
    }

    let results: Vec<(f64, String, f64, f64)> = points
        .par_iter()
        .map(|(feature, lambda)| -> Result<(f64, String, f64, f64)> {
            let idx = feature_index(&names, feature)?;
            let mut direction = DVector::zeros(base.dim());
            direction[idx] = 1.0;
            let family = ShiftFamily::new(vec![direction])
                .and_then(|f| f.with_bounds(vec![(lo, hi)]))
                .map_err(anyhow::Error::from)?;
            let utility = AlignmentRegularized::new(loss.clone(), *lambda, cfg.utility.sign)
                .map_err(anyhow::Error::from)?;
            let ctx = FamilyContext::new(1.0, &base, &base, loss.as_ref(), &utility, &solver);

            let (eta_star, theta_star) = selfish_equilibrium(&family, &ctx, &optimizer)
                .with_context(|| format!("selfish equilibrium for {feature}, lambda {lambda}"))?;
            let u_star = family_utility(&family, &eta_star, &ctx)?;

            // Best collective strategy: start from the selfish point and
            // from both bounds, keep the best ascent result.
            let mut best = optimize_strategy(&family, Some(eta_star.clone()), &ctx, &optimizer)?;
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
            let benefit = best.utility - u_star;

            let star_strategy = family.strategy(&eta_star)?;
            let sharp_strategy = family.strategy(&best.eta)?;
            let d_star = star_strategy.apply(&base, &theta_star)?;
            let d_sharp = sharp_strategy.apply(&base, &theta_star)?;
            let phi = alignment_phi(&d_star, &d_sharp, &theta_star, loss.as_ref(), &utility)?;
            log::debug!("{feature} lambda={lambda}: phi={phi:.6}, benefit={benefit:.6}");
            Ok((*lambda, feature.clone(), phi, benefit))
        })
        .collect::<Result<_>>()?;

    let mut sorted = results;
    sorted.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then_with(|| a.1.cmp(&b.1))
    });
    let rows: Vec<Vec<String>> = sorted
        .into_iter()
        .map(|(lambda, strategy, phi, benefit)| {
            vec![fmt(lambda), strategy, fmt(phi), fmt(benefit)]
        })
        .collect();
    writer.csv(
        "alignment_sweep.csv",
        &["lambda", "strategy", "phi", "benefit"],
        &rows,
    )?;
    writer.finish(
        "alignment-sweep",
        cfg,
        cfg.data.seed,
        standardization,
        serde_json::Value::Null,
        false,
    )?;
    Ok(0)
}
