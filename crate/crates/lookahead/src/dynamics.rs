//! Repeated risk minimization over mixed populations: trajectories, stable
//! points, empirical contraction factors and the theoretical rate they are
//! compared against.

use crate::error::{Error, Result};
use crate::learner::{fit_from, SolverConfig};
use crate::loss::Loss;
use crate::population::{
    coupling_wasserstein_bound, mixture, EmpiricalDistribution, Model, PopulationMix,
    RemainderBehavior,
};
use crate::strategies::{level_k_model_chain, Strategy};

/// Trajectory of the retraining loop.
#[derive(Debug, Clone)]
pub struct DynamicsTrace {
    /// theta_0 .. theta_T.
    pub thetas: Vec<Model>,
    /// `||theta_{t+1} - theta_t||`, one entry per transition.
    pub iterate_gaps: Vec<f64>,
    pub converged: bool,
    pub stable_point: Option<Model>,
}

/// The contraction factor promised for a level-k mixture.
#[derive(Debug, Clone)]
pub struct RatePrediction {
    pub epsilon: f64,
    pub beta: f64,
    pub gamma: f64,
    /// `sum_k alpha_k (eps beta / gamma)^k`.
    pub rate: f64,
    /// False when `eps >= gamma / beta`; the prediction is then vacuous and
    /// retraining is merely not guaranteed to contract.
    pub contractive: bool,
}

/// The population's data at deployed model `theta`: level-k pushforwards at
/// their fractions, the collective's fixed strategy at fraction alpha, and
/// the remainder either non-strategic or best-responding at level 1.
pub fn induced_distribution(
    mix: &PopulationMix,
    theta: &Model,
    loss: &dyn Loss,
    solver: &SolverConfig,
) -> Result<EmpiricalDistribution> {
    mix.validate()?;
    let mut parts: Vec<(f64, EmpiricalDistribution)> = Vec::new();

    if !mix.levelk_weights.is_empty() {
        let level_one = mix.level_one.as_ref().expect("validated");
        let max_k = mix.levelk_weights.iter().map(|(k, _)| *k).max().unwrap();
        // One chain serves every level: the level-k pushforward responds to
        // chain element k-1.
        let chain =
            level_k_model_chain(theta, max_k, &mix.base, loss, level_one.as_ref(), solver)?;
        for &(k, alpha) in &mix.levelk_weights {
            let dist = level_one.apply(&mix.base, &chain[k - 1])?;
            parts.push((alpha, dist));
        }
    }

    if let Some((alpha, strategy)) = &mix.collective {
        parts.push((*alpha, strategy.apply(&mix.base, theta)?));
    }

    let rem = mix.remainder_weight().max(0.0);
    if rem > 0.0 {
        let dist = match mix.remainder_behavior {
            RemainderBehavior::NonStrategic => mix.base.clone(),
            RemainderBehavior::SelfishLevelOne => mix
                .level_one
                .as_ref()
                .expect("validated")
                .apply(&mix.base, theta)?,
        };
        parts.push((rem, dist));
    }

    let refs: Vec<(f64, &EmpiricalDistribution)> =
        parts.iter().map(|(w, d)| (*w, d)).collect();
    mixture(&refs)
}

/// Run `theta_{t+1} = fit(induced(theta_t))` until the iterate gap drops
/// below `gap_tol` or `max_rounds` is exhausted. Non-contractive settings run
/// to the round budget and report `converged = false` instead of erroring.
pub fn repeated_rm(
    mix: &PopulationMix,
    loss: &dyn Loss,
    theta0: &Model,
    max_rounds: usize,
    gap_tol: f64,
    solver: &SolverConfig,
) -> Result<DynamicsTrace> {
    if gap_tol <= 0.0 {
        return Err(Error::InvalidParameter("gap_tol must be > 0".into()));
    }
    let mut thetas = vec![theta0.clone()];
    let mut gaps = Vec::new();
    let mut converged = false;
    for round in 0..max_rounds {
        let current = thetas.last().unwrap();
        let dist = induced_distribution(mix, current, loss, solver).map_err(|e| {
            Error::DynamicsRound {
                round,
                source: Box::new(e),
            }
        })?;
        let next =
            fit_from(&dist, loss, solver, current).map_err(|e| Error::DynamicsRound {
                round,
                source: Box::new(e),
            })?;
        let gap = next.distance(current);
        thetas.push(next);
        gaps.push(gap);
        if gap <= gap_tol {
            converged = true;
            break;
        }
    }
    let stable_point = if converged {
        Some(thetas.last().unwrap().clone())
    } else {
        None
    };
    Ok(DynamicsTrace {
        thetas,
        iterate_gaps: gaps,
        converged,
        stable_point,
    })
}

/// Geometric-mean ratio of consecutive iterate gaps after `burn_in`
/// transitions. Gaps at or below the numerical floor 1e-13 are unusable.
pub fn empirical_rate(trace: &DynamicsTrace, burn_in: usize) -> Result<f64> {
    let usable: Vec<f64> = trace
        .iterate_gaps
        .iter()
        .skip(burn_in)
        .copied()
        .take_while(|g| *g > 1e-13)
        .collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientGaps {
            needed: 3,
            found: usable.len(),
        });
    }
    // Telescoping geometric mean of consecutive ratios.
    let first = usable[0];
    let last = usable[usable.len() - 1];
    let n = (usable.len() - 1) as f64;
    Ok(((last.ln() - first.ln()) / n).exp())
}

/// Theorem-backed contraction factor for a level-k mixture.
pub fn theoretical_rate(
    levelk_weights: &[(usize, f64)],
    epsilon: f64,
    beta: f64,
    gamma: f64,
) -> Result<RatePrediction> {
    if gamma <= 0.0 || beta < 0.0 || epsilon < 0.0 {
        return Err(Error::InvalidParameter(
            "rate prediction needs gamma > 0, beta >= 0, epsilon >= 0".into(),
        ));
    }
    let c = epsilon * beta / gamma;
    let mut rate = 0.0;
    for &(k, alpha) in levelk_weights {
        if k == 0 || alpha < 0.0 {
            return Err(Error::InvalidParameter(
                "level-k rate terms need k >= 1 and alpha >= 0".into(),
            ));
        }
        if alpha == 0.0 {
            continue;
        }
        rate += alpha * c.powi(k as i32);
    }
    Ok(RatePrediction {
        epsilon,
        beta,
        gamma,
        rate,
        contractive: c < 1.0,
    })
}

/// Contraction factor when an alpha-fraction plays a fixed strategy and the
/// rest responds selfishly: `eps * beta * (1 - alpha) / gamma`.
pub fn heterogeneous_rate(alpha: f64, epsilon: f64, beta: f64, gamma: f64) -> f64 {
    epsilon * beta * (1.0 - alpha) / gamma
}

/// Empirical upper-bound estimate of the sensitivity of a strategy's
/// pushforward map: max over model pairs of coupling bound / parameter
/// distance.
pub fn estimate_sensitivity(
    strategy: &dyn Strategy,
    base: &EmpiricalDistribution,
    theta_pairs: &[(Model, Model)],
) -> Result<f64> {
    if theta_pairs.is_empty() {
        return Err(Error::InvalidParameter(
            "sensitivity estimation needs at least one model pair".into(),
        ));
    }
    let mut worst: f64 = 0.0;
    for (a, b) in theta_pairs {
        let gap = a.distance(b);
        if gap <= 1e-9 {
            return Err(Error::InvalidParameter(
                "model pairs must be distinct (gap > 1e-9)".into(),
            ));
        }
        let da = strategy.apply(base, a)?;
        let db = strategy.apply(base, b)?;
        worst = worst.max(coupling_wasserstein_bound(&da, &db)? / gap);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::SquaredScalar;
    use crate::strategies::{Identity, ParametricShift, QuadraticBestResponse};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;
    use std::sync::Arc;

    fn base() -> EmpiricalDistribution {
        EmpiricalDistribution::from_scalars(&[1.0, 3.0]).unwrap()
    }

    fn level1() -> Arc<dyn Strategy> {
        Arc::new(QuadraticBestResponse::new(0.5, vec![0]).unwrap())
    }

    fn levelk_mix(weights: Vec<(usize, f64)>) -> PopulationMix {
        PopulationMix {
            base: base(),
            levelk_weights: weights,
            collective: None,
            remainder_behavior: RemainderBehavior::NonStrategic,
            level_one: Some(level1()),
        }
    }

    #[test]
    fn induced_level1_mean() {
        let mix = levelk_mix(vec![(1, 1.0)]);
        let d = induced_distribution(
            &mix,
            &Model::scalar(2.0),
            &SquaredScalar::new(1),
            &SolverConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(d.mean_x()[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn induced_mixed_levels_mean() {
        let mix = levelk_mix(vec![(1, 0.5), (2, 0.5)]);
        let d = induced_distribution(
            &mix,
            &Model::scalar(2.0),
            &SquaredScalar::new(1),
            &SolverConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(d.mean_x()[0], 1.25, epsilon = 1e-9);
    }

    #[test]
    fn induced_collective_shift_ignores_theta() {
        let shift = ParametricShift::along(1.0, dvector![1.0]);
        let mix = PopulationMix {
            base: base(),
            levelk_weights: vec![],
            collective: Some((1.0, Arc::new(shift))),
            remainder_behavior: RemainderBehavior::NonStrategic,
            level_one: None,
        };
        for theta in [0.0, 2.0, -5.0] {
            let d = induced_distribution(
                &mix,
                &Model::scalar(theta),
                &SquaredScalar::new(1),
                &SolverConfig::default(),
            )
            .unwrap();
            assert_abs_diff_eq!(d.mean_x()[0], 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn repeated_rm_converges_to_two_thirds_of_mu() {
        // Affine update theta -> 2 - 0.5 theta; fixed point 4/3.
        let mix = levelk_mix(vec![(1, 1.0)]);
        let trace = repeated_rm(
            &mix,
            &SquaredScalar::new(1),
            &Model::scalar(2.0),
            200,
            1e-9,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(trace.converged);
        let stable = trace.stable_point.as_ref().unwrap();
        assert_abs_diff_eq!(stable.theta[0], 4.0 / 3.0, epsilon = 1e-8);
        // First iterates follow 2, 1, 1.5, 1.25, ...
        assert_abs_diff_eq!(trace.thetas[1].theta[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(trace.thetas[2].theta[0], 1.5, epsilon = 1e-8);
        assert_abs_diff_eq!(trace.thetas[3].theta[0], 1.25, epsilon = 1e-8);
    }

    #[test]
    fn repeated_rm_level2_same_fixed_point_faster() {
        let mix = levelk_mix(vec![(2, 1.0)]);
        let trace = repeated_rm(
            &mix,
            &SquaredScalar::new(1),
            &Model::scalar(2.0),
            200,
            1e-9,
            &SolverConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(
            trace.stable_point.as_ref().unwrap().theta[0],
            4.0 / 3.0,
            epsilon = 1e-8
        );
        let rate = empirical_rate(&trace, 2).unwrap();
        assert_abs_diff_eq!(rate, 0.25, epsilon = 0.01);
    }

    #[test]
    fn repeated_rm_from_stable_point_converges_immediately() {
        let mix = levelk_mix(vec![(1, 1.0)]);
        let trace = repeated_rm(
            &mix,
            &SquaredScalar::new(1),
            &Model::scalar(4.0 / 3.0),
            10,
            1e-8,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(trace.converged);
        assert_eq!(trace.iterate_gaps.len(), 1);
        assert!(trace.iterate_gaps[0] <= 1e-8);
    }

    #[test]
    fn empirical_rates_match_affine_slopes() {
        for (weights, expected) in [
            (vec![(1usize, 1.0)], 0.5),
            (vec![(2, 1.0)], 0.25),
            (vec![(1, 0.5), (2, 0.5)], 0.125),
        ] {
            let mix = levelk_mix(weights);
            let trace = repeated_rm(
                &mix,
                &SquaredScalar::new(1),
                &Model::scalar(2.0),
                200,
                1e-11,
                &SolverConfig::default(),
            )
            .unwrap();
            let rate = empirical_rate(&trace, 2).unwrap();
            assert_abs_diff_eq!(rate, expected, epsilon = 0.01);
        }
    }

    #[test]
    fn empirical_rate_requires_enough_gaps() {
        let trace = DynamicsTrace {
            thetas: vec![Model::scalar(0.0); 3],
            iterate_gaps: vec![0.5, 0.25],
            converged: false,
            stable_point: None,
        };
        assert!(matches!(
            empirical_rate(&trace, 0),
            Err(Error::InsufficientGaps { .. })
        ));
    }

    #[test]
    fn theoretical_rates() {
        let r = theoretical_rate(&[(1, 1.0)], 0.5, 2.0, 2.0).unwrap();
        assert_abs_diff_eq!(r.rate, 0.5, epsilon = 1e-15);
        assert!(r.contractive);
        let r2 = theoretical_rate(&[(2, 1.0)], 0.5, 2.0, 2.0).unwrap();
        assert_abs_diff_eq!(r2.rate, 0.25, epsilon = 1e-15);
        let mixd = theoretical_rate(&[(1, 0.5), (2, 0.5)], 0.5, 2.0, 2.0).unwrap();
        assert_abs_diff_eq!(mixd.rate, 0.375, epsilon = 1e-15);
        let nc = theoretical_rate(&[(1, 1.0)], 1.5, 2.0, 2.0).unwrap();
        assert!(!nc.contractive);
    }

    #[test]
    fn heterogeneous_rate_limits() {
        assert_abs_diff_eq!(heterogeneous_rate(1.0, 0.5, 2.0, 2.0), 0.0);
        assert_abs_diff_eq!(heterogeneous_rate(0.0, 0.5, 2.0, 2.0), 0.5);
        assert_abs_diff_eq!(heterogeneous_rate(0.5, 0.5, 2.0, 2.0), 0.25);
    }

    #[test]
    fn sensitivity_estimates() {
        let pairs = vec![
            (Model::scalar(2.0), Model::scalar(0.0)),
            (Model::scalar(1.0), Model::scalar(-1.0)),
        ];
        let br = QuadraticBestResponse::new(0.5, vec![0]).unwrap();
        let eps = estimate_sensitivity(&br, &base(), &pairs).unwrap();
        assert_abs_diff_eq!(eps, 0.5, epsilon = 1e-10);

        assert_abs_diff_eq!(
            estimate_sensitivity(&Identity, &base(), &pairs).unwrap(),
            0.0
        );
        let shift = ParametricShift::along(0.7, dvector![1.0]);
        assert_abs_diff_eq!(
            estimate_sensitivity(&shift, &base(), &pairs).unwrap(),
            0.0
        );
    }

    #[test]
    fn stability_residual_closed_forms() {
        // Stable point mu0 / (1 + eps) = 4/3, residual ~ 0 there. One unit
        // away the refit lands at theta* - eps, so the residual is 1 + eps.
        let mix = levelk_mix(vec![(1, 1.0)]);
        let loss = SquaredScalar::new(1);
        let cfg = SolverConfig::default();
        let stable = Model::scalar(2.0 / 1.5);
        let d_stable = induced_distribution(&mix, &stable, &loss, &cfg).unwrap();
        let r = crate::learner::stability_residual(&d_stable, &loss, &stable, &cfg).unwrap();
        assert!(r <= 1e-8, "residual {r}");

        let perturbed = Model::scalar(2.0 / 1.5 + 1.0);
        let d_pert = induced_distribution(&mix, &perturbed, &loss, &cfg).unwrap();
        let r2 = crate::learner::stability_residual(&d_pert, &loss, &perturbed, &cfg).unwrap();
        assert_abs_diff_eq!(r2, 1.5, epsilon = 1e-8);
    }
}
