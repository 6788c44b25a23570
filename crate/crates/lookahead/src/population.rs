//! Domain types and the expectation/geometry primitives every other module
//! consumes.
//!
//! Populations are finite empirical distributions with explicit weights, so
//! every expectation in the library is an exact weighted sum evaluated in
//! index order. No sampling, no parallel reductions inside a single
//! expectation; results are bit-stable across runs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on weight normalization.
pub const WEIGHT_TOL: f64 = 1e-12;

/// Conditioning guard for inverse-metric inner products.
pub const COND_LIMIT: f64 = 1e12;

/// One individual's data point `z = (x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Feature vector.
    pub x: DVector<f64>,
    /// Label; 0/1 for classification, real for regression. Settings without a
    /// label role use 0.
    pub y: f64,
}

impl Sample {
    pub fn new(x: DVector<f64>, y: f64) -> Self {
        Sample { x, y }
    }

    /// Convenience for scalar settings.
    pub fn scalar(x: f64) -> Self {
        Sample::new(DVector::from_element(1, x), 0.0)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.y.is_finite() && self.x.iter().all(|v| v.is_finite())
    }

    /// Euclidean distance treating z = (x, y) as one vector.
    pub fn distance(&self, other: &Sample) -> f64 {
        let dx2: f64 = self
            .x
            .iter()
            .zip(other.x.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let dy = self.y - other.y;
        (dx2 + dy * dy).sqrt()
    }
}

/// Parameter vector of the learner's predictor. When the predictor has an
/// intercept it occupies the last coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub theta: DVector<f64>,
}

impl Model {
    pub fn new(theta: DVector<f64>) -> Self {
        Model { theta }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Model::new(DVector::from_column_slice(v))
    }

    pub fn scalar(t: f64) -> Self {
        Model::from_slice(&[t])
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn distance(&self, other: &Model) -> f64 {
        (&self.theta - &other.theta).norm()
    }
}

/// Weighted finite collection of samples. Weights are nonnegative and sum to
/// one within `WEIGHT_TOL`.
#[derive(Debug, Clone)]
pub struct EmpiricalDistribution {
    samples: Vec<Sample>,
    weights: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(samples: Vec<Sample>, weights: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidDistribution("no samples".into()));
        }
        if samples.len() != weights.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} samples but {} weights",
                samples.len(),
                weights.len()
            )));
        }
        let d = samples[0].dim();
        for (i, s) in samples.iter().enumerate() {
            if s.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.dim(),
                    context: "sample feature dimension",
                });
            }
            if !s.is_finite() {
                return Err(Error::InvalidDistribution(format!(
                    "sample {i} has non-finite components"
                )));
            }
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(EmpiricalDistribution { samples, weights })
    }

    /// Uniform weights over the given samples.
    pub fn uniform(samples: Vec<Sample>) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::InvalidDistribution("no samples".into()));
        }
        let w = 1.0 / n as f64;
        // Renormalize exactly so the sum check passes for any n.
        let mut weights = vec![w; n];
        let sum: f64 = weights.iter().sum();
        for v in &mut weights {
            *v /= sum;
        }
        EmpiricalDistribution::new(samples, weights)
    }

    /// Uniform distribution over 1-D points, labels zero.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        EmpiricalDistribution::uniform(xs.iter().map(|&x| Sample::scalar(x)).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Sample, f64)> {
        self.samples.iter().zip(self.weights.iter().copied())
    }

    /// Weighted mean of the feature vectors.
    pub fn mean_x(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (s, w) in self.iter() {
            m += &s.x * w;
        }
        m
    }

    /// Weighted mean label.
    pub fn mean_y(&self) -> f64 {
        self.iter().map(|(s, w)| s.y * w).sum()
    }

    /// Sub-population with the given label, weights renormalized.
    pub fn conditional_on_label(&self, label: f64) -> Result<Self> {
        let mut samples = Vec::new();
        let mut weights = Vec::new();
        for (s, w) in self.iter() {
            if s.y == label {
                samples.push(s.clone());
                weights.push(w);
            }
        }
        let total: f64 = weights.iter().sum();
        if samples.is_empty() || total <= 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "no mass on label {label}"
            )));
        }
        for w in &mut weights {
            *w /= total;
        }
        EmpiricalDistribution::new(samples, weights)
    }
}

/// Weighted expectation of `f` over the distribution, summed in index order.
pub fn expected_value<F>(dist: &EmpiricalDistribution, f: F, theta: &Model) -> f64
where
    F: Fn(&Sample, &Model) -> f64,
{
    dist.iter().map(|(s, w)| w * f(s, theta)).sum()
}

/// Weighted expectation of a vector-valued function (index order).
pub fn expected_vector<F>(dist: &EmpiricalDistribution, f: F, theta: &Model) -> DVector<f64>
where
    F: Fn(&Sample, &Model) -> DVector<f64>,
{
    let mut acc: Option<DVector<f64>> = None;
    for (s, w) in dist.iter() {
        let v = f(s, theta) * w;
        match &mut acc {
            None => acc = Some(v),
            Some(a) => *a += v,
        }
    }
    acc.expect("distribution is nonempty")
}

/// Weighted expectation of a matrix-valued function (index order).
pub fn expected_matrix<F>(dist: &EmpiricalDistribution, f: F, theta: &Model) -> DMatrix<f64>
where
    F: Fn(&Sample, &Model) -> DMatrix<f64>,
{
    let mut acc: Option<DMatrix<f64>> = None;
    for (s, w) in dist.iter() {
        let m = f(s, theta) * w;
        match &mut acc {
            None => acc = Some(m),
            Some(a) => *a += m,
        }
    }
    acc.expect("distribution is nonempty")
}

/// Inner-product mode for [`weighted_inner`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricMode {
    /// `a' M b`
    Direct,
    /// `a' M^{-1} b`, via a symmetric factorization (no explicit inverse).
    Inverse,
}

/// `a' M b` or `a' M^{-1} b` for symmetric positive definite `M`.
///
/// Inverse mode solves `M s = b` with a Cholesky factorization and refuses
/// matrices whose eigenvalue condition number exceeds [`COND_LIMIT`].
pub fn weighted_inner(
    a: &DVector<f64>,
    b: &DVector<f64>,
    m: &DMatrix<f64>,
    mode: MetricMode,
) -> Result<f64> {
    let p = m.nrows();
    if m.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: m.ncols(),
            context: "metric matrix must be square",
        });
    }
    if a.len() != p || b.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: a.len().max(b.len()),
            context: "vector length vs metric size",
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric matrix"));
    }
    match mode {
        MetricMode::Direct => Ok(a.dot(&(m * b))),
        MetricMode::Inverse => {
            check_conditioning(m)?;
            let chol = m
                .clone()
                .cholesky()
                .ok_or(Error::IllConditioned {
                    cond: f64::INFINITY,
                    limit: COND_LIMIT,
                })?;
            let s = chol.solve(b);
            Ok(a.dot(&s))
        }
    }
}

fn check_conditioning(m: &DMatrix<f64>) -> Result<()> {
    let eig = m.clone().symmetric_eigen();
    let mut min = f64::INFINITY;
    let mut max: f64 = 0.0;
    for v in eig.eigenvalues.iter() {
        min = min.min(v.abs());
        max = max.max(v.abs());
    }
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if cond > COND_LIMIT {
        return Err(Error::IllConditioned {
            cond,
            limit: COND_LIMIT,
        });
    }
    Ok(())
}

/// Convex combination of distributions: sample lists concatenated, weights
/// scaled by the mixture weight.
pub fn mixture(components: &[(f64, &EmpiricalDistribution)]) -> Result<EmpiricalDistribution> {
    if components.is_empty() {
        return Err(Error::InvalidDistribution("empty mixture".into()));
    }
    let total: f64 = components.iter().map(|(w, _)| *w).sum();
    if components.iter().any(|(w, _)| *w < 0.0) {
        return Err(Error::InvalidParameter(
            "mixture weights must be nonnegative".into(),
        ));
    }
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidParameter(format!(
            "mixture weights sum to {total}, expected 1"
        )));
    }
    let d = components[0].1.dim();
    let mut samples = Vec::new();
    let mut weights = Vec::new();
    for (w, dist) in components {
        if dist.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: dist.dim(),
                context: "mixture component dimension",
            });
        }
        for (s, sw) in dist.iter() {
            samples.push(s.clone());
            weights.push(w * sw);
        }
    }
    // Components with weight zero keep their samples at weight zero; the sum
    // is still 1 within tolerance.
    EmpiricalDistribution::new(samples, weights)
}

/// Identity-coupling upper bound on the Wasserstein-1 distance between two
/// index-aligned pushforwards of the same base samples:
/// `sum_i w_i ||z_i - z'_i||_2`.
///
/// Exact for translations; an upper bound in general. Requires matching
/// lengths and weights.
pub fn coupling_wasserstein_bound(
    d0: &EmpiricalDistribution,
    d1: &EmpiricalDistribution,
) -> Result<f64> {
    if d0.len() != d1.len() {
        return Err(Error::DimensionMismatch {
            expected: d0.len(),
            got: d1.len(),
            context: "coupling bound sample count",
        });
    }
    if d0.dim() != d1.dim() {
        return Err(Error::DimensionMismatch {
            expected: d0.dim(),
            got: d1.dim(),
            context: "coupling bound feature dimension",
        });
    }
    for (w0, w1) in d0.weights().iter().zip(d1.weights().iter()) {
        if (w0 - w1).abs() > WEIGHT_TOL {
            return Err(Error::InvalidDistribution(
                "coupling bound requires identical index-aligned weights".into(),
            ));
        }
    }
    Ok(d0
        .iter()
        .zip(d1.samples().iter())
        .map(|((z0, w), z1)| w * z0.distance(z1))
        .sum())
}

/// Who is in the population: level-k fractions, an optional collective with a
/// fixed strategy, and a non-strategic or selfish remainder.
#[derive(Clone)]
pub struct PopulationMix {
    /// Base distribution the strategic maps push forward.
    pub base: EmpiricalDistribution,
    /// `(k, alpha_k)` pairs with `k >= 1`.
    pub levelk_weights: Vec<(usize, f64)>,
    /// Collective fraction and its fixed (theta-independent) strategy.
    pub collective: Option<(f64, std::sync::Arc<dyn crate::strategies::Strategy>)>,
    /// Behavior of the mass not covered by level-k thinkers or the collective.
    pub remainder_behavior: RemainderBehavior,
    /// Level-1 strategy used to realize level-k pushforwards and the selfish
    /// remainder. Required whenever `levelk_weights` is nonempty or the
    /// remainder is selfish.
    pub level_one: Option<std::sync::Arc<dyn crate::strategies::Strategy>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemainderBehavior {
    NonStrategic,
    SelfishLevelOne,
}

impl PopulationMix {
    /// Fraction not assigned to level-k thinkers or the collective.
    pub fn remainder_weight(&self) -> f64 {
        let lk: f64 = self.levelk_weights.iter().map(|(_, a)| a).sum();
        let c = self.collective.as_ref().map(|(a, _)| *a).unwrap_or(0.0);
        1.0 - lk - c
    }

    pub fn validate(&self) -> Result<()> {
        for (k, a) in &self.levelk_weights {
            if *k == 0 {
                return Err(Error::InvalidParameter(
                    "level-k weights require k >= 1; level 0 is the non-strategic remainder".into(),
                ));
            }
            if *a < 0.0 {
                return Err(Error::InvalidParameter(
                    "level-k fractions must be nonnegative".into(),
                ));
            }
        }
        if let Some((a, _)) = &self.collective {
            if !(0.0..=1.0).contains(a) {
                return Err(Error::InvalidParameter(
                    "collective fraction must lie in [0, 1]".into(),
                ));
            }
        }
        let rem = self.remainder_weight();
        if rem < -WEIGHT_TOL {
            return Err(Error::InvalidParameter(format!(
                "declared fractions exceed 1 by {}",
                -rem
            )));
        }
        let needs_level_one = !self.levelk_weights.is_empty()
            || (rem > WEIGHT_TOL && self.remainder_behavior == RemainderBehavior::SelfishLevelOne);
        if needs_level_one && self.level_one.is_none() {
            return Err(Error::InvalidParameter(
                "population declares strategic mass but no level-1 strategy".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_point() -> EmpiricalDistribution {
        EmpiricalDistribution::from_scalars(&[1.0, 3.0]).unwrap()
    }

    #[test]
    fn expected_value_weighted_mean() {
        let d =
            EmpiricalDistribution::new(vec![Sample::scalar(1.0), Sample::scalar(3.0)], vec![0.5, 0.5])
                .unwrap();
        let v = expected_value(&d, |s, _| s.x[0], &Model::scalar(0.0));
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn expected_value_zero_residual() {
        let d = EmpiricalDistribution::new(vec![Sample::scalar(5.0)], vec![1.0]).unwrap();
        let v = expected_value(&d, |s, t| (t.theta[0] - s.x[0]).powi(2), &Model::scalar(5.0));
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn expected_value_asymmetric_weights() {
        let d =
            EmpiricalDistribution::new(vec![Sample::scalar(1.0), Sample::scalar(3.0)], vec![0.25, 0.75])
                .unwrap();
        let v = expected_value(&d, |s, _| s.x[0], &Model::scalar(0.0));
        assert_abs_diff_eq!(v, 2.5, epsilon = 1e-15);
    }

    #[test]
    fn weighted_inner_identity_metric() {
        let a = DVector::from_column_slice(&[1.0, 0.0]);
        let m = DMatrix::identity(2, 2);
        let v = weighted_inner(&a, &a, &m, MetricMode::Direct).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_inner_inverse_scalar() {
        let a = DVector::from_column_slice(&[2.0]);
        let b = DVector::from_column_slice(&[3.0]);
        let m = DMatrix::from_element(1, 1, 2.0);
        let v = weighted_inner(&a, &b, &m, MetricMode::Inverse).unwrap();
        assert_abs_diff_eq!(v, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn weighted_inner_orthogonal() {
        let a = DVector::from_column_slice(&[1.0, 0.0]);
        let b = DVector::from_column_slice(&[0.0, 2.0]);
        let m = DMatrix::identity(2, 2);
        let v = weighted_inner(&a, &b, &m, MetricMode::Direct).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_inner_rejects_ill_conditioned() {
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 1e-14]));
        let a = DVector::from_column_slice(&[1.0, 1.0]);
        let err = weighted_inner(&a, &a, &m, MetricMode::Inverse).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }));
    }

    #[test]
    fn mixture_single_component_is_identity() {
        let d = two_point();
        let m = mixture(&[(1.0, &d)]).unwrap();
        assert_eq!(m.len(), 2);
        assert_abs_diff_eq!(m.mean_x()[0], d.mean_x()[0], epsilon = 1e-15);
    }

    #[test]
    fn mixture_midpoint_mean() {
        let d0 = EmpiricalDistribution::from_scalars(&[0.0]).unwrap();
        let d1 = EmpiricalDistribution::from_scalars(&[1.0]).unwrap();
        let m = mixture(&[(0.5, &d0), (0.5, &d1)]).unwrap();
        assert_abs_diff_eq!(m.mean_x()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mixture_rejects_dimension_mismatch() {
        let d0 = two_point();
        let d1 = EmpiricalDistribution::uniform(vec![Sample::new(
            DVector::from_column_slice(&[0.0, 1.0]),
            0.0,
        )])
        .unwrap();
        assert!(mixture(&[(0.5, &d0), (0.5, &d1)]).is_err());
    }

    #[test]
    fn coupling_bound_identical_and_translation() {
        let d = two_point();
        assert_abs_diff_eq!(coupling_wasserstein_bound(&d, &d).unwrap(), 0.0);
        let shifted = EmpiricalDistribution::from_scalars(&[2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(
            coupling_wasserstein_bound(&two_point(), &shifted).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn coupling_bound_misaligned_rejected() {
        let d = two_point();
        let other = EmpiricalDistribution::from_scalars(&[1.0, 2.0, 3.0]).unwrap();
        assert!(coupling_wasserstein_bound(&d, &other).is_err());
    }

    #[test]
    fn distribution_rejects_bad_weights() {
        assert!(EmpiricalDistribution::new(vec![Sample::scalar(0.0)], vec![0.5]).is_err());
        assert!(
            EmpiricalDistribution::new(
                vec![Sample::scalar(0.0), Sample::scalar(1.0)],
                vec![1.5, -0.5]
            )
            .is_err()
        );
        assert!(EmpiricalDistribution::new(vec![Sample::scalar(f64::NAN)], vec![1.0]).is_err());
    }

    #[test]
    fn conditional_on_label_renormalizes() {
        let d = EmpiricalDistribution::uniform(vec![
            Sample::new(DVector::from_column_slice(&[0.0]), 1.0),
            Sample::new(DVector::from_column_slice(&[2.0]), 0.0),
            Sample::new(DVector::from_column_slice(&[4.0]), 1.0),
        ])
        .unwrap();
        let c = d.conditional_on_label(1.0).unwrap();
        assert_eq!(c.len(), 2);
        assert_abs_diff_eq!(c.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.mean_x()[0], 2.0, epsilon = 1e-15);
    }
}
