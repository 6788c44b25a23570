//! Property tests for the distribution primitives, the learner and the
//! strategy layer.

use std::sync::Arc;

use lookahead::learner::{fit, SolverConfig};
use lookahead::loss::SquaredScalar;
use lookahead::objective::Objective;
use lookahead::population::{
    coupling_wasserstein_bound, expected_value, mixture, EmpiricalDistribution, Model, Sample,
};
use lookahead::strategies::{
    level_k_apply, level_k_model_chain, QuadraticBestResponse, SimplexReassign, Strategy,
};
use lookahead::utility::LinearScoreQuadraticCost;
use nalgebra::{dvector, DVector};
use proptest::prelude::*;

fn scalar_dist(xs: Vec<f64>) -> EmpiricalDistribution {
    EmpiricalDistribution::from_scalars(&xs).unwrap()
}

fn small_values() -> impl Strategy_<Value = Vec<f64>> {
    proptest::collection::vec(-10.0..10.0f64, 1..6)
}

// proptest's Strategy trait collides with the crate's Strategy; alias it.
use proptest::strategy::Strategy as Strategy_;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// E over a two-component mixture is the weighted sum of component
    /// expectations: the expectation-level face of the mixture lemma.
    #[test]
    fn expectation_linear_in_mixture(
        xs in small_values(),
        ys in small_values(),
        w in 0.0..1.0f64,
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
    ) {
        let d0 = scalar_dist(xs);
        let d1 = scalar_dist(ys);
        let mixed = mixture(&[(w, &d0), (1.0 - w, &d1)]).unwrap();
        let f = |z: &Sample, _: &Model| a * z.x[0] * z.x[0] + b * z.x[0];
        let theta = Model::scalar(0.0);
        let lhs = expected_value(&mixed, f, &theta);
        let rhs = w * expected_value(&d0, f, &theta) + (1.0 - w) * expected_value(&d1, f, &theta);
        prop_assert!((lhs - rhs).abs() <= 1e-12_f64.max(1e-12 * rhs.abs()));
    }

    /// Coupling bound of a mixture of index-aligned pairs is bounded by the
    /// weighted sum of component bounds.
    #[test]
    fn coupling_bound_respects_mixture(
        xs in small_values(),
        shift0 in -3.0..3.0f64,
        ys in small_values(),
        shift1 in -3.0..3.0f64,
        w in 0.0..1.0f64,
    ) {
        let d0 = scalar_dist(xs.clone());
        let d0s = scalar_dist(xs.iter().map(|v| v + shift0).collect());
        let d1 = scalar_dist(ys.clone());
        let d1s = scalar_dist(ys.iter().map(|v| v + shift1).collect());
        let mixed = mixture(&[(w, &d0), (1.0 - w, &d1)]).unwrap();
        let mixed_s = mixture(&[(w, &d0s), (1.0 - w, &d1s)]).unwrap();
        let lhs = coupling_wasserstein_bound(&mixed, &mixed_s).unwrap();
        let rhs = w * coupling_wasserstein_bound(&d0, &d0s).unwrap()
            + (1.0 - w) * coupling_wasserstein_bound(&d1, &d1s).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    /// The risk minimizer is invariant to jointly permuting samples and
    /// weights.
    #[test]
    fn fit_invariant_to_permutation(xs in proptest::collection::vec(-5.0..5.0f64, 2..6)) {
        let n = xs.len();
        let weights: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let samples: Vec<Sample> = xs.iter().map(|&x| Sample::scalar(x)).collect();

        let forward =
            EmpiricalDistribution::new(samples.clone(), weights.clone()).unwrap();
        let mut rev_s = samples;
        let mut rev_w = weights;
        rev_s.reverse();
        rev_w.reverse();
        let reversed = EmpiricalDistribution::new(rev_s, rev_w).unwrap();

        let loss = SquaredScalar::new(1);
        let cfg = SolverConfig::default();
        let a = fit(&forward, &loss, &cfg).unwrap();
        let b = fit(&reversed, &loss, &cfg).unwrap();
        prop_assert!(a.distance(&b) <= 1e-12);
    }

    /// Chain telescoping: the level-k pushforward at theta equals the
    /// level-(k-1) pushforward at the first chain element.
    #[test]
    fn level_k_telescopes(
        theta0 in -4.0..4.0f64,
        eps in 0.05..0.9f64,
        k in 2usize..4,
    ) {
        let base = scalar_dist(vec![1.0, 3.0]);
        let loss = SquaredScalar::new(1);
        let level1 = QuadraticBestResponse::new(eps, vec![0]).unwrap();
        let cfg = SolverConfig::default();
        let theta = Model::scalar(theta0);

        let via_k = level_k_apply(&theta, k, &base, &loss, &level1, &cfg).unwrap();
        let chain = level_k_model_chain(&theta, k, &base, &loss, &level1, &cfg).unwrap();
        let via_k1 = level_k_apply(&chain[1], k - 1, &base, &loss, &level1, &cfg).unwrap();
        for (a, b) in via_k.samples().iter().zip(via_k1.samples()) {
            prop_assert!((a.x[0] - b.x[0]).abs() <= 1e-10);
        }
    }

    /// The closed-form best response satisfies the first-order condition of
    /// the quadratic-cost utility and is a local maximum.
    #[test]
    fn best_response_is_utility_argmax(
        x0 in -3.0..3.0f64,
        x1 in -3.0..3.0f64,
        t0 in -2.0..2.0f64,
        t1 in -2.0..2.0f64,
        eps in 0.05..1.0f64,
    ) {
        let base = EmpiricalDistribution::uniform(vec![Sample::new(dvector![x0, x1], 0.0)]).unwrap();
        let theta = Model::from_slice(&[t0, t1]);
        let strategy = QuadraticBestResponse::new(eps, vec![0, 1]).unwrap();
        let moved = strategy.apply(&base, &theta).unwrap();
        let z = &moved.samples()[0];
        let u = LinearScoreQuadraticCost::new(eps, dvector![x0, x1]).unwrap();

        // Stationarity in the strategic coordinates.
        let g = u.grad_z(z, &theta);
        prop_assert!(g[0].abs() <= 1e-10 && g[1].abs() <= 1e-10);

        // No perturbation of a strategic coordinate improves the utility.
        let here = u.value(z, &theta);
        for coord in 0..2 {
            for delta in [-1e-3, 1e-3] {
                let mut x = z.x.clone();
                x[coord] += delta;
                let probe = Sample::new(x, z.y);
                prop_assert!(u.value(&probe, &theta) <= here + 1e-15);
            }
        }
    }

    /// Level-1 sensitivity is exactly eps on the strategic coordinates.
    #[test]
    fn best_response_sensitivity_exact(
        xs in small_values(),
        eps in 0.05..1.0f64,
        ta in -3.0..3.0f64,
        tb in -3.0..3.0f64,
    ) {
        prop_assume!((ta - tb).abs() > 1e-6);
        let base = scalar_dist(xs);
        let strategy = QuadraticBestResponse::new(eps, vec![0]).unwrap();
        let da = strategy.apply(&base, &Model::scalar(ta)).unwrap();
        let db = strategy.apply(&base, &Model::scalar(tb)).unwrap();
        let bound = coupling_wasserstein_bound(&da, &db).unwrap();
        let exact = eps * (ta - tb).abs();
        prop_assert!((bound - exact).abs() <= 1e-10 * exact.max(1.0));
    }

    /// The reassignment family is linear in its parameterization: applying
    /// interpolated weights equals mixing the two pushforwards.
    #[test]
    fn simplex_reassign_linear_in_weights(
        w1 in 0.0..1.0f64,
        w2 in 0.0..1.0f64,
        lam in 0.0..1.0f64,
    ) {
        let anchors: Vec<DVector<f64>> =
            vec![dvector![0.0, 1.0], dvector![1.0, 0.0], dvector![-1.0, -1.0]];
        let wa = {
            let rest = 1.0 - w1.min(1.0);
            dvector![w1.min(1.0), rest * 0.5, rest * 0.5]
        };
        let wb = {
            let rest = 1.0 - w2.min(1.0);
            dvector![rest * 0.25, w2.min(1.0), rest * 0.75]
        };
        let base = EmpiricalDistribution::uniform(vec![Sample::new(dvector![9.0, 9.0], 0.0)]).unwrap();
        let theta = Model::from_slice(&[0.0, 0.0]);

        let interp = &wa * lam + &wb * (1.0 - lam);
        let interp = &interp / interp.iter().sum::<f64>();
        let sa = SimplexReassign::new(anchors.clone(), wa).unwrap();
        let sb = SimplexReassign::new(anchors.clone(), wb).unwrap();
        let si = SimplexReassign::new(anchors, interp).unwrap();

        let da = sa.apply(&base, &theta).unwrap();
        let db = sb.apply(&base, &theta).unwrap();
        let di = si.apply(&base, &theta).unwrap();
        // Same anchors in the same order; interpolation acts on weights only.
        for ((i_w, a_w), b_w) in di
            .weights()
            .iter()
            .zip(da.weights().iter())
            .zip(db.weights().iter())
        {
            prop_assert!((i_w - (lam * a_w + (1.0 - lam) * b_w)).abs() <= 1e-12);
        }
    }
}

/// Level-k thinkers accelerate convergence but never move the fixed point:
/// stable points agree across mixtures (deterministic, not property-based,
/// but naturally lives with the invariants).
#[test]
fn stable_point_unique_across_mixtures() {
    use lookahead::dynamics::repeated_rm;
    use lookahead::population::{PopulationMix, RemainderBehavior};

    let base = scalar_dist(vec![1.0, 3.0]);
    let level1: Arc<dyn Strategy> = Arc::new(QuadraticBestResponse::new(0.5, vec![0]).unwrap());
    let loss = SquaredScalar::new(1);
    let cfg = SolverConfig::default();

    let mut stable_points = Vec::new();
    for weights in [
        vec![(1usize, 1.0)],
        vec![(2, 1.0)],
        vec![(3, 1.0)],
        vec![(1, 0.5), (2, 0.5)],
    ] {
        let mix = PopulationMix {
            base: base.clone(),
            levelk_weights: weights,
            collective: None,
            remainder_behavior: RemainderBehavior::NonStrategic,
            level_one: Some(level1.clone()),
        };
        let trace = repeated_rm(&mix, &loss, &Model::scalar(2.0), 500, 1e-11, &cfg).unwrap();
        assert!(trace.converged);
        stable_points.push(trace.stable_point.unwrap());
    }
    for pair in stable_points.windows(2) {
        assert!(pair[0].distance(&pair[1]) <= 1e-8);
    }
}
