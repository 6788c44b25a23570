//! Common surface for per-sample objectives (losses and utilities) and the
//! finite-difference checks used to validate their analytic derivatives.

use nalgebra::DVector;

use crate::population::{expected_vector, EmpiricalDistribution, Model, Sample};

/// A scalar function of `(z, theta)` with analytic first derivatives.
///
/// `grad_z` is the derivative with respect to the data point, laid out as
/// `[d/dx_1 .. d/dx_d, d/dy]`.
pub trait Objective: Send + Sync {
    fn name(&self) -> &'static str;
    fn value(&self, z: &Sample, theta: &Model) -> f64;
    fn grad_theta(&self, z: &Sample, theta: &Model) -> DVector<f64>;
    fn grad_z(&self, z: &Sample, theta: &Model) -> DVector<f64>;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn name(&self) -> &'static str {
        (**self).name()
    }
    fn value(&self, z: &Sample, theta: &Model) -> f64 {
        (**self).value(z, theta)
    }
    fn grad_theta(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        (**self).grad_theta(z, theta)
    }
    fn grad_z(&self, z: &Sample, theta: &Model) -> DVector<f64> {
        (**self).grad_z(z, theta)
    }
}

/// Weighted expectation of the per-sample theta-gradient.
pub fn expected_grad(
    dist: &EmpiricalDistribution,
    obj: &dyn Objective,
    theta: &Model,
) -> DVector<f64> {
    expected_vector(dist, |z, t| obj.grad_theta(z, t), theta)
}

/// Weighted expectation of the objective itself.
pub fn expected_objective(dist: &EmpiricalDistribution, obj: &dyn Objective, theta: &Model) -> f64 {
    crate::population::expected_value(dist, |z, t| obj.value(z, t), theta)
}

/// Central finite differences of `f` at `point`, step scaled per coordinate.
pub fn central_diff<F>(f: F, point: &DVector<f64>, step: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut grad = DVector::zeros(point.len());
    let mut probe = point.clone();
    for i in 0..point.len() {
        let h = step * point[i].abs().max(1.0);
        probe[i] = point[i] + h;
        let plus = f(&probe);
        probe[i] = point[i] - h;
        let minus = f(&probe);
        probe[i] = point[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Relative error between an analytic gradient and its finite-difference
/// estimate, `||a - b|| / max(1, ||a||, ||b||)`.
pub fn grad_rel_error(analytic: &DVector<f64>, numeric: &DVector<f64>) -> f64 {
    let denom = analytic.norm().max(numeric.norm()).max(1.0);
    (analytic - numeric).norm() / denom
}

/// Checks `grad_theta` against central differences of `value` at `(z, theta)`.
pub fn check_grad_theta(obj: &dyn Objective, z: &Sample, theta: &Model, step: f64) -> f64 {
    let analytic = obj.grad_theta(z, theta);
    let numeric = central_diff(
        |t| obj.value(z, &Model::new(t.clone())),
        &theta.theta,
        step,
    );
    grad_rel_error(&analytic, &numeric)
}

/// Checks `grad_z` against central differences of `value` in `(x, y)`.
pub fn check_grad_z(obj: &dyn Objective, z: &Sample, theta: &Model, step: f64) -> f64 {
    let analytic = obj.grad_z(z, theta);
    let d = z.dim();
    let mut point = DVector::zeros(d + 1);
    point.rows_mut(0, d).copy_from(&z.x);
    point[d] = z.y;
    let numeric = central_diff(
        |p| {
            let probe = Sample::new(p.rows(0, d).into_owned(), p[d]);
            obj.value(&probe, theta)
        },
        &point,
        step,
    );
    grad_rel_error(&analytic, &numeric)
}
