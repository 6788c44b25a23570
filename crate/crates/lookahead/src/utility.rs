//! Agent utilities: what individuals or collectives get out of a deployed
//! model.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::loss::Loss;
use crate::objective::Objective;
use crate::population::{Model, Sample};

/// Marker trait: a utility is an [`Objective`] evaluated from the agents'
/// side. Kept separate from [`Loss`] because utilities carry no curvature
/// contract.
pub trait Utility: Objective {}

/// Linear score minus a quadratic modification cost:
/// `u = -f_theta(x) - ||x0 - x||^2 / (2 eps)`.
///
/// `origin` is the agent's unmodified feature vector; the best response over
/// the strategic coordinates is `x_S = x0_S - eps * theta_S`.
#[derive(Debug, Clone)]
pub struct LinearScoreQuadraticCost {
    pub epsilon: f64,
    pub origin: DVector<f64>,
}

impl LinearScoreQuadraticCost {
    pub fn new(epsilon: f64, origin: DVector<f64>) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(Error::InvalidParameter("epsilon must be > 0".into()));
        }
        Ok(LinearScoreQuadraticCost { epsilon, origin })
    }

    fn score(&self, z: &Sample, theta: &Model) -> f64 {
        let d = z.dim();
        let mut s = if theta.dim() == d + 1 { theta.theta[d] } else { 0.0 };
        for i in 0..d {
            s += theta.theta[i] * z.x[i];
        }
        s
    }
}

impl Objective for LinearScoreQuadraticCost {
    fn name(&self) -> &'static str {
        "linear-score-quadratic-cost"
    }

    fn value(&self, z: &Sample, theta: &Model) -> f64 {
        let cost = (&self.origin - &z.x).norm_squared() / (2.0 * self.epsilon);
        -self.score(z, theta) - cost
    }

    fn grad_theta(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        let d = z.dim();
        let p = theta.dim();
        let mut g = DVector::zeros(p);
        for i in 0..d {
            g[i] = -z.x[i];
        }
        if p == d + 1 {
            g[d] = -1.0;
        }
        g
    }

    fn grad_z(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        let d = z.dim();
        let mut g = DVector::zeros(d + 1);
        for i in 0..d {
            g[i] = -theta.theta[i] + (self.origin[i] - z.x[i]) / self.epsilon;
        }
        g
    }
}

impl Utility for LinearScoreQuadraticCost {}

/// The learner's loss with a regularization offset controlling alignment:
/// `u = sign * loss(z, theta) - lambda * ||theta||^2`.
///
/// `sign` defaults to +1 (the verbatim instantiation); -1 flips the loss term
/// for the variant where the agents oppose rather than share the loss.
#[derive(Clone)]
pub struct AlignmentRegularized {
    pub loss: Arc<dyn Loss>,
    pub lambda: f64,
    pub sign: f64,
}

impl AlignmentRegularized {
    pub fn new(loss: Arc<dyn Loss>, lambda: f64, sign: f64) -> Result<Self> {
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::InvalidParameter("sign must be +1 or -1".into()));
        }
        Ok(AlignmentRegularized { loss, lambda, sign })
    }
}

impl Objective for AlignmentRegularized {
    fn name(&self) -> &'static str {
        "alignment-regularized"
    }

    fn value(&self, z: &Sample, theta: &Model) -> f64 {
        self.sign * self.loss.value(z, theta) - self.lambda * theta.theta.norm_squared()
    }

    fn grad_theta(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        self.sign * self.loss.grad_theta(z, theta) - 2.0 * self.lambda * &theta.theta
    }

    fn grad_z(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        self.sign * self.loss.grad_z(z, theta)
    }
}

impl Utility for AlignmentRegularized {}

/// `u = -||theta - theta_target||^2`: the collective wants the deployed model
/// near a fixed target.
#[derive(Debug, Clone)]
pub struct TargetModel {
    pub target: Model,
}

impl TargetModel {
    pub fn new(target: Model) -> Self {
        TargetModel { target }
    }
}

impl Objective for TargetModel {
    fn name(&self) -> &'static str {
        "target-model"
    }

    fn value(&self, _z: &Sample, theta: &Model) -> f64 {
        -(&theta.theta - &self.target.theta).norm_squared()
    }

    fn grad_theta(&self, _z: &Sample, theta: &Model) -> DVector<f64> {
        -2.0 * (&theta.theta - &self.target.theta)
    }

    fn grad_z(&self, z: &Sample, _theta: &Model) -> DVector<f64> {
        DVector::zeros(z.dim() + 1)
    }
}

impl Utility for TargetModel {}

/// `u = -(f_theta(x) - g(x))^2` for a linear-with-intercept predictor and an
/// affine target labeling `g(x) = coef . x + intercept`.
#[derive(Debug, Clone)]
pub struct TargetPrediction {
    pub coef: DVector<f64>,
    pub intercept: f64,
}

impl TargetPrediction {
    pub fn new(coef: DVector<f64>, intercept: f64) -> Self {
        TargetPrediction { coef, intercept }
    }

    pub fn target(&self, x: &DVector<f64>) -> f64 {
        self.coef.dot(x) + self.intercept
    }

    fn predict(&self, z: &Sample, theta: &Model) -> f64 {
        let d = z.dim();
        let mut f = theta.theta[d];
        for i in 0..d {
            f += theta.theta[i] * z.x[i];
        }
        f
    }
}

impl Objective for TargetPrediction {
    fn name(&self) -> &'static str {
        "target-prediction"
    }

    fn value(&self, z: &Sample, theta: &Model) -> f64 {
        let gap = self.predict(z, theta) - self.target(&z.x);
        -gap * gap
    }

    fn grad_theta(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        let d = z.dim();
        let gap = self.predict(z, theta) - self.target(&z.x);
        let mut g = DVector::zeros(theta.dim());
        for i in 0..d {
            g[i] = -2.0 * gap * z.x[i];
        }
        g[d] = -2.0 * gap;
        g
    }

    fn grad_z(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        let d = z.dim();
        let gap = self.predict(z, theta) - self.target(&z.x);
        let mut g = DVector::zeros(d + 1);
        for i in 0..d {
            g[i] = -2.0 * gap * (theta.theta[i] - self.coef[i]);
        }
        g
    }
}

impl Utility for TargetPrediction {}

/// The anchor-preference utility of the centroid-steering setting:
/// `u = -||p1 - theta||^2 - ||p2 - theta||^2 - ||z - theta||^2`.
#[derive(Debug, Clone)]
pub struct AnchorPreference {
    pub p1: DVector<f64>,
    pub p2: DVector<f64>,
}

impl AnchorPreference {
    pub fn new(p1: DVector<f64>, p2: DVector<f64>) -> Self {
        AnchorPreference { p1, p2 }
    }
}

impl Objective for AnchorPreference {
    fn name(&self) -> &'static str {
        "triangle"
    }

    fn value(&self, z: &Sample, theta: &Model) -> f64 {
        let t = &theta.theta;
        -(&self.p1 - t).norm_squared() - (&self.p2 - t).norm_squared() - (&z.x - t).norm_squared()
    }

    fn grad_theta(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        let t = &theta.theta;
        2.0 * (&self.p1 - t) + 2.0 * (&self.p2 - t) + 2.0 * (&z.x - t)
    }

    fn grad_z(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        let d = z.dim();
        let mut g = DVector::zeros(d + 1);
        g.rows_mut(0, d)
            .copy_from(&(-2.0 * (&z.x - &theta.theta)));
        g
    }
}

impl Utility for AnchorPreference {}

/// Population utility of the score-minus-cost objective over an
/// index-aligned pushforward, pairing each moved sample with its own origin.
///
/// Mixtures of index-aligned pushforwards concatenate component sample
/// lists, so the moved distribution may hold any whole multiple of the base
/// samples; pairing is by index modulo the base length.
pub fn quadratic_cost_population_utility(
    base: &crate::population::EmpiricalDistribution,
    moved: &crate::population::EmpiricalDistribution,
    theta: &Model,
    epsilon: f64,
) -> Result<f64> {
    if moved.len() % base.len() != 0 {
        return Err(Error::DimensionMismatch {
            expected: base.len(),
            got: moved.len(),
            context: "paired utility sample count (must be a multiple of the base)",
        });
    }
    let n = base.len();
    let mut total = 0.0;
    for (i, (z, w)) in moved.iter().enumerate() {
        let origin = &base.samples()[i % n];
        let u = LinearScoreQuadraticCost::new(epsilon, origin.x.clone())?;
        total += w * u.value(z, theta);
    }
    Ok(total)
}

/// Second derivative of a utility in theta, by central differences of the
/// analytic gradient. Utilities carry no analytic Hessian contract; this is
/// enough for curvature diagnostics.
pub fn numeric_hessian_theta(u: &dyn Utility, z: &Sample, theta: &Model, step: f64) -> DMatrix<f64> {
    let p = theta.dim();
    let mut h = DMatrix::zeros(p, p);
    let mut probe = theta.theta.clone();
    for j in 0..p {
        let hj = step * theta.theta[j].abs().max(1.0);
        probe[j] = theta.theta[j] + hj;
        let plus = u.grad_theta(z, &Model::new(probe.clone()));
        probe[j] = theta.theta[j] - hj;
        let minus = u.grad_theta(z, &Model::new(probe.clone()));
        probe[j] = theta.theta[j];
        let col = (plus - minus) / (2.0 * hj);
        h.set_column(j, &col);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::SquaredScalar;
    use crate::objective::{check_grad_theta, check_grad_z};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    #[test]
    fn quadratic_cost_utility_value() {
        // 1-D testbed utility: u = -theta z - (z - z0)^2 / (2 eps).
        let u = LinearScoreQuadraticCost::new(0.5, dvector![3.0]).unwrap();
        let z = Sample::scalar(2.0);
        let theta = Model::scalar(4.0 / 3.0);
        assert_abs_diff_eq!(
            u.value(&z, &theta),
            -(4.0 / 3.0) * 2.0 - 1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn all_utilities_pass_gradient_checks() {
        let utilities: Vec<Box<dyn Utility>> = vec![
            Box::new(LinearScoreQuadraticCost::new(0.5, dvector![0.3, -0.7]).unwrap()),
            Box::new(
                AlignmentRegularized::new(
                    Arc::new(SquaredScalar::new(2)),
                    0.25,
                    1.0,
                )
                .unwrap(),
            ),
            Box::new(TargetModel::new(Model::from_slice(&[0.5, -0.1]))),
            Box::new(AnchorPreference::new(dvector![-0.8, -0.5], dvector![0.8, -0.5])),
        ];
        let z = Sample::new(dvector![0.4, -1.1], 0.0);
        let theta = Model::from_slice(&[0.2, 0.6]);
        for u in &utilities {
            let e = check_grad_theta(u.as_ref(), &z, &theta, 1e-5);
            assert!(e <= 1e-5, "{}: grad_theta err {e}", u.name());
            let ez = check_grad_z(u.as_ref(), &z, &theta, 1e-5);
            assert!(ez <= 1e-5, "{}: grad_z err {ez}", u.name());
        }
        // target-prediction uses a (d+1)-dimensional model.
        let tp = TargetPrediction::new(dvector![-1.0, 0.0], 1.0);
        let theta3 = Model::from_slice(&[0.2, 0.6, -0.4]);
        assert!(check_grad_theta(&tp, &z, &theta3, 1e-5) <= 1e-5);
        assert!(check_grad_z(&tp, &z, &theta3, 1e-5) <= 1e-5);
    }

    #[test]
    fn target_prediction_zero_at_match() {
        let tp = TargetPrediction::new(dvector![-1.0], 1.0); // g(x) = 1 - x
        let z = Sample::new(dvector![1.0], 1.0);
        let theta = Model::from_slice(&[-1.0, 1.0]); // f(x) = 1 - x
        assert_abs_diff_eq!(tp.value(&z, &theta), 0.0, epsilon = 1e-15);
    }
}
