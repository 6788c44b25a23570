//! Learner losses: evaluable contracts with gradients, Hessians and the
//! regularity constants (gamma, beta) the convergence predictions consume.
//!
//! Three kinds ship:
//!   * `squared-scalar` — mean estimation, `||theta - x||^2`;
//!   * `squared-prediction` — linear regression with intercept and optional
//!     ridge;
//!   * `regularized-logistic` — cross-entropy with a mandatory ridge so the
//!     loss is strongly convex.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::population::{expected_matrix, EmpiricalDistribution, Model, Sample};

/// A strongly convex per-sample loss.
///
/// `cross_theta_z` is the mixed second derivative `d(grad_theta)/dz`, shape
/// `p x (d+1)` with the label column last; it drives implicit differentiation
/// through the learner's argmin.
pub trait Loss: Objective {
    fn hessian_theta(&self, z: &Sample, theta: &Model) -> DMatrix<f64>;
    fn cross_theta_z(&self, z: &Sample, theta: &Model) -> DMatrix<f64>;
    /// Declared strong-convexity constant gamma of the per-sample loss.
    fn strong_convexity(&self) -> f64;
    /// Declared Lipschitz constant beta of `grad_theta` with respect to `z`.
    fn smoothness_in_z(&self) -> f64;
    /// Parameter dimension for feature dimension `d`.
    fn param_dim(&self, feature_dim: usize) -> usize;
}

/// Weighted expected Hessian of a loss; errors on non-finite entries.
pub fn expected_hessian(
    dist: &EmpiricalDistribution,
    loss: &dyn Loss,
    theta: &Model,
) -> Result<DMatrix<f64>> {
    let h = expected_matrix(dist, |z, t| loss.hessian_theta(z, t), theta);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("expected Hessian"));
    }
    Ok(h)
}

/// `||theta - x||^2` on d-dimensional features; the minimizer is the weighted
/// mean. gamma = beta = 2.
#[derive(Debug, Clone)]
pub struct SquaredScalar {
    dim: usize,
}

impl SquaredScalar {
    pub fn new(dim: usize) -> Self {
        SquaredScalar { dim }
    }
}

impl Objective for SquaredScalar {
    fn name(&self) -> &'static str {
        "squared-scalar"
    }

    fn value(&self, z: &Sample, theta: &Model) -> f64 {
        (&theta.theta - &z.x).norm_squared()
    }

    fn grad_theta(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        2.0 * (&theta.theta - &z.x)
    }

    fn grad_z(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        let d = z.dim();
        let mut g = DVector::zeros(d + 1);
        g.rows_mut(0, d).copy_from(&(2.0 * (&z.x - &theta.theta)));
        g
    }
}

impl Loss for SquaredScalar {
    fn hessian_theta(&self, _z: &Sample, theta: &Model) -> DMatrix<f64> {
        DMatrix::identity(theta.dim(), theta.dim()) * 2.0
    }

    fn cross_theta_z(&self, z: &Sample, theta: &Model) -> DMatrix<f64> {
        let p = theta.dim();
        let mut m = DMatrix::zeros(p, z.dim() + 1);
        for i in 0..p {
            m[(i, i)] = -2.0;
        }
        m
    }

    fn strong_convexity(&self) -> f64 {
        2.0
    }

    fn smoothness_in_z(&self) -> f64 {
        2.0
    }

    fn param_dim(&self, feature_dim: usize) -> usize {
        debug_assert_eq!(feature_dim, self.dim);
        self.dim
    }
}

/// `(theta_w . x + theta_b - y)^2 + ridge/2 ||theta||^2` on a linear model
/// with intercept (last coordinate).
#[derive(Debug, Clone)]
pub struct SquaredPrediction {
    ridge: f64,
    beta: f64,
}

impl SquaredPrediction {
    pub fn new(ridge: f64, beta: f64) -> Result<Self> {
        if ridge < 0.0 {
            return Err(Error::InvalidParameter("ridge must be >= 0".into()));
        }
        Ok(SquaredPrediction { ridge, beta })
    }

    fn residual(&self, z: &Sample, theta: &Model) -> f64 {
        let d = z.dim();
        let mut f = theta.theta[d];
        for i in 0..d {
            f += theta.theta[i] * z.x[i];
        }
        f - z.y
    }

    fn design(&self, z: &Sample) -> DVector<f64> {
        let d = z.dim();
        let mut x = DVector::zeros(d + 1);
        x.rows_mut(0, d).copy_from(&z.x);
        x[d] = 1.0;
        x
    }
}

impl Objective for SquaredPrediction {
    fn name(&self) -> &'static str {
        "squared-prediction"
    }

    fn value(&self, z: &Sample, theta: &Model) -> f64 {
        let m = self.residual(z, theta);
        m * m + 0.5 * self.ridge * theta.theta.norm_squared()
    }

    fn grad_theta(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        let m = self.residual(z, theta);
        2.0 * m * self.design(z) + self.ridge * &theta.theta
    }

    fn grad_z(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        let d = z.dim();
        let m = self.residual(z, theta);
        let mut g = DVector::zeros(d + 1);
        for i in 0..d {
            g[i] = 2.0 * m * theta.theta[i];
        }
        g[d] = -2.0 * m;
        g
    }
}

impl Loss for SquaredPrediction {
    fn hessian_theta(&self, z: &Sample, theta: &Model) -> DMatrix<f64> {
        let x = self.design(z);
        let p = theta.dim();
        2.0 * &x * x.transpose() + DMatrix::identity(p, p) * self.ridge
    }

    fn cross_theta_z(&self, z: &Sample, theta: &Model) -> DMatrix<f64> {
        let d = z.dim();
        let p = theta.dim();
        let m = self.residual(z, theta);
        let x = self.design(z);
        let mut out = DMatrix::zeros(p, d + 1);
        for i in 0..p {
            for j in 0..d {
                let mut v = 2.0 * x[i] * theta.theta[j];
                if i == j {
                    v += 2.0 * m;
                }
                out[(i, j)] = v;
            }
            out[(i, d)] = -2.0 * x[i];
        }
        out
    }

    fn strong_convexity(&self) -> f64 {
        self.ridge
    }

    fn smoothness_in_z(&self) -> f64 {
        self.beta
    }

    fn param_dim(&self, feature_dim: usize) -> usize {
        feature_dim + 1
    }
}

/// Cross-entropy of a logistic model plus `ridge/2 ||theta||^2`. The ridge is
/// mandatory: gamma = ridge must be positive. The intercept is on by default;
/// desk-scale fixtures may disable it.
#[derive(Debug, Clone)]
pub struct RegularizedLogistic {
    ridge: f64,
    intercept: bool,
    beta: f64,
}

impl RegularizedLogistic {
    pub fn new(ridge: f64) -> Result<Self> {
        Self::with_options(ridge, true, 1.0)
    }

    pub fn with_options(ridge: f64, intercept: bool, beta: f64) -> Result<Self> {
        if ridge <= 0.0 {
            return Err(Error::InvalidParameter(
                "logistic loss requires a positive ridge".into(),
            ));
        }
        Ok(RegularizedLogistic {
            ridge,
            intercept,
            beta,
        })
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    fn design(&self, z: &Sample) -> DVector<f64> {
        if self.intercept {
            let d = z.dim();
            let mut x = DVector::zeros(d + 1);
            x.rows_mut(0, d).copy_from(&z.x);
            x[d] = 1.0;
            x
        } else {
            z.x.clone()
        }
    }

    fn score(&self, z: &Sample, theta: &Model) -> f64 {
        let d = z.dim();
        let mut s = if self.intercept { theta.theta[d] } else { 0.0 };
        for i in 0..d {
            s += theta.theta[i] * z.x[i];
        }
        s
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(s)) without overflow.
fn log1p_exp(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

impl Objective for RegularizedLogistic {
    fn name(&self) -> &'static str {
        "regularized-logistic"
    }

    fn value(&self, z: &Sample, theta: &Model) -> f64 {
        let s = self.score(z, theta);
        log1p_exp(s) - z.y * s + 0.5 * self.ridge * theta.theta.norm_squared()
    }

    fn grad_theta(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        let s = self.score(z, theta);
        (sigmoid(s) - z.y) * self.design(z) + self.ridge * &theta.theta
    }

    fn grad_z(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        let d = z.dim();
        let s = self.score(z, theta);
        let sig = sigmoid(s);
        let mut g = DVector::zeros(d + 1);
        for i in 0..d {
            g[i] = (sig - z.y) * theta.theta[i];
        }
        g[d] = -s;
        g
    }
}

impl Loss for RegularizedLogistic {
    fn hessian_theta(&self, z: &Sample, theta: &Model) -> DMatrix<f64> {
        let s = self.score(z, theta);
        let sig = sigmoid(s);
        let x = self.design(z);
        let p = theta.dim();
        sig * (1.0 - sig) * &x * x.transpose() + DMatrix::identity(p, p) * self.ridge
    }

    fn cross_theta_z(&self, z: &Sample, theta: &Model) -> DMatrix<f64> {
        let d = z.dim();
        let p = theta.dim();
        let s = self.score(z, theta);
        let sig = sigmoid(s);
        let curv = sig * (1.0 - sig);
        let x = self.design(z);
        let mut out = DMatrix::zeros(p, d + 1);
        for i in 0..p {
            for j in 0..d {
                let mut v = curv * x[i] * theta.theta[j];
                if i == j {
                    v += sig - z.y;
                }
                out[(i, j)] = v;
            }
            out[(i, d)] = -x[i];
        }
        out
    }

    fn strong_convexity(&self) -> f64 {
        self.ridge
    }

    fn smoothness_in_z(&self) -> f64 {
        self.beta
    }

    fn param_dim(&self, feature_dim: usize) -> usize {
        feature_dim + if self.intercept { 1 } else { 0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{check_grad_theta, check_grad_z, central_diff, grad_rel_error};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn probes() -> Vec<(Sample, Model)> {
        vec![
            (
                Sample::new(dvector![0.4, -1.2], 1.0),
                Model::from_slice(&[0.7, -0.3, 0.2]),
            ),
            (
                Sample::new(dvector![1.5, 0.3], 0.0),
                Model::from_slice(&[-0.2, 0.9, -0.5]),
            ),
        ]
    }

    #[test]
    fn squared_scalar_constant_curvature() {
        let loss = SquaredScalar::new(1);
        let d = EmpiricalDistribution::from_scalars(&[1.0, 3.0]).unwrap();
        let h = expected_hessian(&d, &loss, &Model::scalar(0.3)).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn squared_prediction_gram_hessian() {
        // Two points x in {0, 1} with intercept: H = 2 E[(x,1)(x,1)'].
        let loss = SquaredPrediction::new(0.0, 0.0).unwrap();
        let d = EmpiricalDistribution::uniform(vec![
            Sample::new(dvector![0.0], 0.0),
            Sample::new(dvector![1.0], 1.0),
        ])
        .unwrap();
        let h = expected_hessian(&d, &loss, &Model::from_slice(&[0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 1.0, epsilon = 1e-15); // 2 * E[x^2] = 2 * 0.5
        assert_abs_diff_eq!(h[(0, 1)], 1.0, epsilon = 1e-15); // 2 * E[x]
        assert_abs_diff_eq!(h[(1, 1)], 2.0, epsilon = 1e-15); // 2 * E[1]
    }

    #[test]
    fn logistic_ridge_lower_bounds_eigenvalues() {
        let ridge = 0.7;
        let loss = RegularizedLogistic::new(ridge).unwrap();
        let d = EmpiricalDistribution::uniform(vec![
            Sample::new(dvector![1.0, -0.5], 1.0),
            Sample::new(dvector![-1.0, 0.25], 0.0),
        ])
        .unwrap();
        let h = expected_hessian(&d, &loss, &Model::from_slice(&[0.3, -0.1, 0.0])).unwrap();
        let eig = h.symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= ridge - 1e-9, "min eigenvalue {min} < gamma {ridge}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let losses: Vec<Box<dyn Loss>> = vec![
            Box::new(SquaredScalar::new(2)),
            Box::new(SquaredPrediction::new(0.1, 1.0).unwrap()),
            Box::new(RegularizedLogistic::new(0.5).unwrap()),
        ];
        for loss in &losses {
            for (z, theta) in probes() {
                let theta = if loss.name() == "squared-scalar" {
                    Model::from_slice(&[0.7, -0.3])
                } else {
                    theta
                };
                let e = check_grad_theta(loss.as_ref(), &z, &theta, 1e-5);
                assert!(e <= 1e-5, "{}: grad_theta rel err {e}", loss.name());
                let ez = check_grad_z(loss.as_ref(), &z, &theta, 1e-5);
                assert!(ez <= 1e-5, "{}: grad_z rel err {ez}", loss.name());
            }
        }
    }

    #[test]
    fn hessian_matches_grad_differences() {
        let losses: Vec<Box<dyn Loss>> = vec![
            Box::new(SquaredPrediction::new(0.2, 1.0).unwrap()),
            Box::new(RegularizedLogistic::new(1.0).unwrap()),
        ];
        for loss in &losses {
            let (z, theta) = probes().remove(0);
            let h = loss.hessian_theta(&z, &theta);
            for i in 0..theta.dim() {
                let col = central_diff(
                    |t| loss.grad_theta(&z, &Model::new(t.clone()))[i],
                    &theta.theta,
                    1e-6,
                );
                let hrow = h.row(i).transpose();
                let e = grad_rel_error(&hrow, &col);
                assert!(e <= 1e-6, "{}: hessian row {i} err {e}", loss.name());
            }
        }
    }

    #[test]
    fn cross_derivative_matches_grad_theta_z_differences() {
        let losses: Vec<Box<dyn Loss>> = vec![
            Box::new(SquaredScalar::new(2)),
            Box::new(SquaredPrediction::new(0.2, 1.0).unwrap()),
            Box::new(RegularizedLogistic::new(1.0).unwrap()),
        ];
        for loss in &losses {
            let (z, mut theta) = probes().remove(0);
            if loss.name() == "squared-scalar" {
                theta = Model::from_slice(&[0.7, -0.3]);
            }
            let cross = loss.cross_theta_z(&z, &theta);
            let d = z.dim();
            // Column j of cross is d(grad_theta)/dz_j.
            let mut point = DVector::zeros(d + 1);
            point.rows_mut(0, d).copy_from(&z.x);
            point[d] = z.y;
            for i in 0..theta.dim() {
                let numeric = central_diff(
                    |p| {
                        let probe = Sample::new(p.rows(0, d).into_owned(), p[d]);
                        loss.grad_theta(&probe, &theta)[i]
                    },
                    &point,
                    1e-6,
                );
                let analytic = cross.row(i).transpose();
                let e = grad_rel_error(&analytic, &numeric);
                assert!(e <= 1e-6, "{}: cross row {i} err {e}", loss.name());
            }
        }
    }

    #[test]
    fn logistic_requires_positive_ridge() {
        assert!(RegularizedLogistic::new(0.0).is_err());
    }
}
