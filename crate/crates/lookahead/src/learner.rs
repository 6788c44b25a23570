//! The platform's response to a data distribution: deterministic risk
//! minimization over strongly convex losses.
//!
//! Newton is the default method. Losses are smooth, the parameter dimension
//! is small, and equilibrium tests need argmin semantics tight enough that
//! the returned model's expected gradient norm is below `grad_tol`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::loss::{expected_hessian, Loss};
use crate::objective::{expected_grad, expected_objective};
use crate::population::{EmpiricalDistribution, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Newton,
    GradientDescent,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub method: SolveMethod,
    /// Step size for gradient descent; `None` selects `1 / (gamma + L0)`
    /// where `L0` is the operator norm of the expected Hessian at the start.
    pub step_size: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grad_tol: 1e-10,
            max_iters: 10_000,
            method: SolveMethod::Newton,
            step_size: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grad_tol <= 0.0 {
            return Err(Error::InvalidParameter("grad_tol must be > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Risk minimization `argmin_theta E_dist[loss]`, started from zeros.
pub fn fit(dist: &EmpiricalDistribution, loss: &dyn Loss, cfg: &SolverConfig) -> Result<Model> {
    let p = loss.param_dim(dist.dim());
    fit_from(dist, loss, cfg, &Model::new(DVector::zeros(p)))
}

/// Risk minimization warm-started from `theta0`. Warm starts change the
/// iteration count, never the fixed point.
pub fn fit_from(
    dist: &EmpiricalDistribution,
    loss: &dyn Loss,
    cfg: &SolverConfig,
    theta0: &Model,
) -> Result<Model> {
    cfg.validate()?;
    let p = loss.param_dim(dist.dim());
    if theta0.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: theta0.dim(),
            context: "warm start dimension",
        });
    }
    match cfg.method {
        SolveMethod::Newton => newton(dist, loss, cfg, theta0),
        SolveMethod::GradientDescent => gradient_descent(dist, loss, cfg, theta0),
    }
}

fn newton(
    dist: &EmpiricalDistribution,
    loss: &dyn Loss,
    cfg: &SolverConfig,
    theta0: &Model,
) -> Result<Model> {
    let mut theta = theta0.clone();
    let mut grad = expected_grad(dist, &loss_obj(loss), &theta);
    for _ in 0..cfg.max_iters {
        let norm = grad.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("expected gradient"));
        }
        if norm <= cfg.grad_tol {
            return Ok(theta);
        }
        let hess = expected_hessian(dist, loss, &theta)?;
        let chol = hess.cholesky().ok_or(Error::IllConditioned {
            cond: f64::INFINITY,
            limit: crate::population::COND_LIMIT,
        })?;
        let step = chol.solve(&grad);
        // Backtracking keeps Newton monotone on the expected loss. Near the
        // optimum the objective decrease drops below float resolution, so a
        // step that shrinks the gradient norm is also accepted.
        let current = expected_objective(dist, &loss_obj(loss), &theta);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = Model::new(&theta.theta - t * &step);
            let value = expected_objective(dist, &loss_obj(loss), &candidate);
            if value.is_finite() {
                let sufficient_decrease =
                    value <= current - 1e-4 * t * grad.dot(&step).max(0.0);
                let value_floor = current + 16.0 * f64::EPSILON * current.abs().max(1.0);
                let grad_progress = || {
                    value <= value_floor
                        && expected_grad(dist, &loss_obj(loss), &candidate).norm()
                            <= 0.9 * norm
                };
                if sufficient_decrease || grad_progress() {
                    theta = candidate;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // Step direction exhausted; the gradient norm reports the state.
            break;
        }
        grad = expected_grad(dist, &loss_obj(loss), &theta);
    }
    let norm = grad.norm();
    if norm <= cfg.grad_tol {
        Ok(theta)
    } else {
        Err(Error::NonConvergence {
            iters: cfg.max_iters,
            grad_norm: norm,
            tol: cfg.grad_tol,
        })
    }
}

fn gradient_descent(
    dist: &EmpiricalDistribution,
    loss: &dyn Loss,
    cfg: &SolverConfig,
    theta0: &Model,
) -> Result<Model> {
    let mut theta = theta0.clone();
    let step = match cfg.step_size {
        Some(s) if s > 0.0 => s,
        Some(_) => return Err(Error::InvalidParameter("step_size must be > 0".into())),
        None => {
            let hess = expected_hessian(dist, loss, &theta)?;
            let op_norm = hess
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(0.0_f64, |a, b| a.max(b.abs()));
            1.0 / (loss.strong_convexity() + op_norm)
        }
    };
    for _ in 0..cfg.max_iters {
        let grad = expected_grad(dist, &loss_obj(loss), &theta);
        let norm = grad.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("expected gradient"));
        }
        if norm <= cfg.grad_tol {
            return Ok(theta);
        }
        theta = Model::new(&theta.theta - step * grad);
    }
    let norm = expected_grad(dist, &loss_obj(loss), &theta).norm();
    if norm <= cfg.grad_tol {
        Ok(theta)
    } else {
        Err(Error::NonConvergence {
            iters: cfg.max_iters,
            grad_norm: norm,
            tol: cfg.grad_tol,
        })
    }
}

fn loss_obj(loss: &dyn Loss) -> &dyn crate::objective::Objective {
    loss
}

/// `||theta - fit(dist)||`: zero (up to solver tolerance) exactly when theta
/// is the risk minimizer on the distribution it induced.
pub fn stability_residual(
    dist: &EmpiricalDistribution,
    loss: &dyn Loss,
    theta: &Model,
    cfg: &SolverConfig,
) -> Result<f64> {
    let refit = fit_from(dist, loss, cfg, theta)?;
    Ok(theta.distance(&refit))
}
