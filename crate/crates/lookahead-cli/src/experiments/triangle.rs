//! Anchor-triangle benchmark: closed forms against the full pipeline.

use anyhow::Result;

use lookahead::collective::{
    alignment_phi, benefit_of_coordination, optimize_strategy, phi_bound_check,
    population_utility, segment_concavity_estimate, FamilyContext, OptimizerConfig, SimplexFamily,
    StrategyFamily,
};
use lookahead::loss::SquaredScalar;
use lookahead::oracle::{simplex_brute_force, triangle_closed_form, TriangleSetting};
use lookahead::utility::AnchorPreference;

use crate::config::ExperimentConfig;
use crate::output::{fmt, RunWriter};

pub fn run(cfg: &ExperimentConfig, out_dir: &std::path::Path) -> Result<i32> {
    let mut writer = RunWriter::new(out_dir)?;
    let r = cfg.triangle.r;
    let setting = TriangleSetting::with_radius(r).map_err(anyhow::Error::from)?;
    let closed = triangle_closed_form(&setting);
    let base = setting.anchor_distribution();
    let loss = SquaredScalar::new(2);
    let utility = AnchorPreference::new(setting.anchors[0].clone(), setting.anchors[1].clone());
    let solver = cfg.solver.to_solver()?;
    let optimizer = OptimizerConfig {
        step: cfg.optimizer.step,
        max_iters: cfg.optimizer.max_iters,
        grad_tol: cfg.optimizer.grad_tol,
        line_search: cfg.optimizer.line_search,
    };
    let family = SimplexFamily::new(setting.anchor_vec()).map_err(anyhow::Error::from)?;
    let ctx = FamilyContext::new(1.0, &base, &base, &loss, &utility, &solver);

    let star = family.strategy(&closed.w_star).map_err(anyhow::Error::from)?;
    let u_star = population_utility(star.as_ref(), 1.0, &base, &base, &loss, &utility, &solver)
        .map_err(anyhow::Error::from)?;

    let sharp_opt =
        optimize_strategy(&family, None, &ctx, &optimizer).map_err(anyhow::Error::from)?;
    let u_sharp = sharp_opt.utility;

    let benefit = benefit_of_coordination(
        (star.as_ref(), &closed.theta_star),
        (
            family
                .strategy(&sharp_opt.eta)
                .map_err(anyhow::Error::from)?
                .as_ref(),
            &sharp_opt.model,
        ),
        &base,
        &loss,
        &utility,
        &solver,
        1e-8,
    )
    .map_err(anyhow::Error::from)?;

    let d_star = star
        .apply(&base, &closed.theta_star)
        .map_err(anyhow::Error::from)?;
    let d_sharp = family
        .strategy(&closed.w_sharp)
        .map_err(anyhow::Error::from)?
        .apply(&base, &closed.theta_star)
        .map_err(anyhow::Error::from)?;
    let phi = alignment_phi(&d_star, &d_sharp, &closed.theta_star, &loss, &utility)
        .map_err(anyhow::Error::from)?;
    let gamma_seg = segment_concavity_estimate(&family, &closed.w_star, &closed.w_sharp, &ctx)
        .map_err(anyhow::Error::from)?;
    let bound = phi_bound_check(phi, gamma_seg).map_err(anyhow::Error::from)?;
    let closed_bound = phi_bound_check(closed.phi, closed.gamma_u).map_err(anyhow::Error::from)?;

    let (w_grid, _) = simplex_brute_force(&setting, &utility, cfg.triangle.grid_step)
        .map_err(anyhow::Error::from)?;
    let grid_linf = (0..3)
        .map(|i| (w_grid[i] - closed.w_sharp[i]).abs())
        .fold(0.0_f64, f64::max);
    let opt_linf = (0..3)
        .map(|i| (sharp_opt.eta[i] - closed.w_sharp[i]).abs())
        .fold(0.0_f64, f64::max);
    let theta_sharp_gap = sharp_opt.model.distance(&closed.theta_sharp);

    let r2 = r * r;
    let quantities: Vec<(&str, f64, f64)> = vec![
        ("u_star", -3.0 * r2, u_star),
        ("u_sharp", -2.25 * r2, u_sharp),
        ("benefit", closed.benefit, benefit),
        ("phi", closed.phi, phi),
        ("phi_bound", closed_bound, bound),
        ("theta_sharp_gap", 0.0, theta_sharp_gap),
        ("w_sharp_optimizer_linf", 0.0, opt_linf),
        ("w_sharp_grid_linf", 0.0, grid_linf),
    ];
    let rows: Vec<Vec<String>> = quantities
        .into_iter()
        .map(|(q, cf, pipe)| vec![q.to_string(), fmt(cf), fmt(pipe), fmt((cf - pipe).abs())])
        .collect();
    writer.csv(
        "triangle.csv",
        &["quantity", "closed_form", "pipeline", "abs_err"],
        &rows,
    )?;
    writer.finish(
        "triangle",
        cfg,
        cfg.data.seed,
        None,
        serde_json::json!({ "gamma_segment_estimate": gamma_seg }),
        false,
    )?;
    Ok(0)
}
