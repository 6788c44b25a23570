//! Collective reasoning: population utility at equilibrium, optimization of
//! parametric strategy families through the equilibrium map, and the
//! alignment diagnostics that bound the benefit of coordination.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::learner::{fit, fit_from, stability_residual, SolverConfig};
use crate::loss::{expected_hessian, Loss};
use crate::objective::{expected_grad, expected_objective};
use crate::population::{
    mixture, weighted_inner, EmpiricalDistribution, MetricMode, Model,
};
use crate::strategies::{ParametricShift, SimplexReassign, Strategy};
use crate::utility::Utility;

/// Rounds budget for equilibrium fixed-point iteration.
const EQ_MAX_ROUNDS: usize = 1_000;
/// Iterate-gap tolerance declaring an equilibrium.
const EQ_GAP_TOL: f64 = 1e-11;

/// Diagnostics at a pair of equilibria plus a fixed-strategy mixture.
#[derive(Debug, Clone)]
pub struct AlignmentReport {
    pub phi: f64,
    pub psi: f64,
    pub benefit: f64,
    pub grad_u_at_star: DVector<f64>,
    pub grad_l_at_sharp: DVector<f64>,
    pub hessian_star: DMatrix<f64>,
    pub du_dalpha: f64,
}

/// Result of a strategy optimization run.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub eta: DVector<f64>,
    pub model: Model,
    pub utility: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Gradient-ascent settings for strategy optimization. The step and budget
/// defaults follow the reference simulation protocol; line search is on by
/// default and only changes how fast the same ascent converges.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub step: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub line_search: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step: 0.01,
            max_iters: 250,
            grad_tol: 1e-8,
            line_search: true,
        }
    }
}

/// A differentiable family of fixed strategies `h(eta)`.
///
/// `collective_base` is the sub-population implementing the strategy;
/// `ambient_base` is the non-strategic rest. They coincide in the classic
/// full-population settings.
pub trait StrategyFamily: Send + Sync {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn initial(&self) -> DVector<f64>;

    /// The concrete strategy at parameter `eta`.
    fn strategy(&self, eta: &DVector<f64>) -> Result<Arc<dyn Strategy>>;

    /// Euclidean projection onto the feasible parameter set.
    fn project(&self, eta: DVector<f64>) -> DVector<f64>;

    /// Gradient of `U(eta) = E_{D_h(eta)}[u(z, theta*(eta))]` by implicit
    /// differentiation through the learner's argmin.
    fn implicit_gradient(
        &self,
        eta: &DVector<f64>,
        ctx: &FamilyContext<'_>,
    ) -> Result<DVector<f64>>;

    /// Gradient of the myopic objective `E_{D_h(eta)}[u(z, theta)]` at a
    /// frozen model.
    fn myopic_gradient(
        &self,
        eta: &DVector<f64>,
        theta: &Model,
        ctx: &FamilyContext<'_>,
    ) -> Result<DVector<f64>>;

    /// Central-difference gradient of `U` in the same feasible geometry as
    /// `implicit_gradient` (tangent directions for constrained families).
    fn fd_gradient(
        &self,
        eta: &DVector<f64>,
        step: f64,
        ctx: &FamilyContext<'_>,
    ) -> Result<DVector<f64>>;
}

/// Everything a family evaluation needs besides the parameter.
pub struct FamilyContext<'a> {
    pub alpha: f64,
    pub collective_base: &'a EmpiricalDistribution,
    pub ambient_base: &'a EmpiricalDistribution,
    pub loss: &'a dyn Loss,
    pub utility: &'a dyn Utility,
    pub solver: &'a SolverConfig,
}

impl<'a> FamilyContext<'a> {
    pub fn new(
        alpha: f64,
        collective_base: &'a EmpiricalDistribution,
        ambient_base: &'a EmpiricalDistribution,
        loss: &'a dyn Loss,
        utility: &'a dyn Utility,
        solver: &'a SolverConfig,
    ) -> Self {
        FamilyContext {
            alpha,
            collective_base,
            ambient_base,
            loss,
            utility,
            solver,
        }
    }
}

/// Mixture `alpha D_h + (1 - alpha) D_0`.
fn mix_with_base(
    d_h: &EmpiricalDistribution,
    alpha: f64,
    base: &EmpiricalDistribution,
) -> Result<EmpiricalDistribution> {
    if alpha >= 1.0 {
        Ok(d_h.clone())
    } else if alpha <= 0.0 {
        Ok(base.clone())
    } else {
        mixture(&[(alpha, d_h), (1.0 - alpha, base)])
    }
}

/// Model the learner settles on when an alpha-fraction implements `strategy`
/// and the rest is non-strategic. Model-independent strategies need a single
/// fit; model-dependent ones run the retraining fixed point and error if it
/// does not settle.
pub fn equilibrium_model(
    strategy: &dyn Strategy,
    alpha: f64,
    collective_base: &EmpiricalDistribution,
    ambient_base: &EmpiricalDistribution,
    loss: &dyn Loss,
    solver: &SolverConfig,
) -> Result<Model> {
    let p = loss.param_dim(ambient_base.dim());
    let zero = Model::new(DVector::zeros(p));
    if strategy.is_model_independent() || alpha == 0.0 {
        let d_h = strategy.apply(collective_base, &zero)?;
        let dist = mix_with_base(&d_h, alpha, ambient_base)?;
        return fit(&dist, loss, solver);
    }
    let mut theta = zero;
    for _ in 0..EQ_MAX_ROUNDS {
        let d_h = strategy.apply(collective_base, &theta)?;
        let dist = mix_with_base(&d_h, alpha, ambient_base)?;
        let next = fit_from(&dist, loss, solver, &theta)?;
        let gap = next.distance(&theta);
        theta = next;
        if gap <= EQ_GAP_TOL {
            return Ok(theta);
        }
    }
    Err(Error::DynamicsDiverged {
        rounds: EQ_MAX_ROUNDS,
        last_gap: f64::NAN,
    })
}

/// Average utility of the strategy's own pushforward at the model it
/// induces. For mixtures this is the collective members' average utility.
pub fn population_utility(
    strategy: &dyn Strategy,
    alpha: f64,
    collective_base: &EmpiricalDistribution,
    ambient_base: &EmpiricalDistribution,
    loss: &dyn Loss,
    utility: &dyn Utility,
    solver: &SolverConfig,
) -> Result<f64> {
    let theta = equilibrium_model(strategy, alpha, collective_base, ambient_base, loss, solver)?;
    let d_h = strategy.apply(collective_base, &theta)?;
    Ok(expected_objective(&d_h, as_objective(utility), &theta))
}

fn as_objective(u: &dyn Utility) -> &dyn crate::objective::Objective {
    u
}

/// `U(h_sharp) - U(h_star)`: the gain from steering the learner instead of
/// best-responding to it. Both equilibria are re-validated before use.
pub fn benefit_of_coordination(
    selfish: (&dyn Strategy, &Model),
    sharp: (&dyn Strategy, &Model),
    base: &EmpiricalDistribution,
    loss: &dyn Loss,
    utility: &dyn Utility,
    solver: &SolverConfig,
    validation_tol: f64,
) -> Result<f64> {
    let mut utilities = [0.0_f64; 2];
    for (slot, (strategy, theta)) in [selfish, sharp].into_iter().enumerate() {
        let dist = strategy.apply(base, theta)?;
        let residual = stability_residual(&dist, loss, theta, solver)?;
        if residual > validation_tol {
            return Err(Error::InvalidEquilibrium(format!(
                "{} equilibrium has stability residual {residual:.3e} > {validation_tol:.3e}",
                if slot == 0 { "selfish" } else { "collective" }
            )));
        }
        utilities[slot] = expected_objective(&dist, as_objective(utility), theta);
    }
    Ok(utilities[1] - utilities[0])
}

/// Alignment between the population's utility gradient and the learner's
/// loss gradient at the selfish equilibrium, filtered through the local loss
/// curvature:
/// `Phi = < E_{D*}[grad_theta u], E_{D#}[grad_theta l] >_{H*^{-1}}`.
pub fn alignment_phi(
    dist_star: &EmpiricalDistribution,
    dist_sharp: &EmpiricalDistribution,
    theta_star: &Model,
    loss: &dyn Loss,
    utility: &dyn Utility,
) -> Result<f64> {
    let grad_u = expected_grad(dist_star, as_objective(utility), theta_star);
    let grad_l = expected_grad(dist_sharp, loss_objective(loss), theta_star);
    let h_star = expected_hessian(dist_star, loss, theta_star)?;
    weighted_inner(&grad_u, &grad_l, &h_star, MetricMode::Inverse)
}

fn loss_objective(l: &dyn Loss) -> &dyn crate::objective::Objective {
    l
}

/// Scaling-direction alignment for a fixed strategy in a mixture:
/// `Psi = < E_{D_h}[grad u], E_{D_h}[grad l] >_{H^{-1}}` with `H` the Hessian
/// of the mixture loss at the mixture equilibrium. Its sign decides whether
/// growing the collective helps: `dU_alpha/dalpha > 0` iff `Psi < 0`.
pub fn alignment_psi(
    dist_h: &EmpiricalDistribution,
    mixture_dist: &EmpiricalDistribution,
    theta_star_alpha: &Model,
    loss: &dyn Loss,
    utility: &dyn Utility,
) -> Result<f64> {
    let grad_u = expected_grad(dist_h, as_objective(utility), theta_star_alpha);
    let grad_l = expected_grad(dist_h, loss_objective(loss), theta_star_alpha);
    let h = expected_hessian(mixture_dist, loss, theta_star_alpha)?;
    weighted_inner(&grad_u, &grad_l, &h, MetricMode::Inverse)
}

/// Marginal value of collective size: `dU_alpha/dalpha = -Psi / (1 - alpha)`.
pub fn du_dalpha(
    dist_h: &EmpiricalDistribution,
    mixture_dist: &EmpiricalDistribution,
    theta_star_alpha: &Model,
    alpha: f64,
    loss: &dyn Loss,
    utility: &dyn Utility,
) -> Result<f64> {
    if alpha >= 1.0 - 1e-6 {
        return Err(Error::InvalidParameter(
            "du_dalpha requires alpha < 1 - 1e-6".into(),
        ));
    }
    let psi = alignment_psi(dist_h, mixture_dist, theta_star_alpha, loss, utility)?;
    Ok(-psi / (1.0 - alpha))
}

/// `Phi^2 / (2 gamma_U)`: the certified upper bound on the benefit of
/// coordination. `gamma_U` is the strong-concavity constant of the utility
/// landscape along the relevant strategy parameterization; it must be
/// supplied, never guessed.
pub fn phi_bound_check(phi: f64, gamma_u: f64) -> Result<f64> {
    if gamma_u <= 0.0 {
        return Err(Error::InvalidParameter(
            "phi bound requires a positive strong-concavity constant".into(),
        ));
    }
    Ok(phi * phi / (2.0 * gamma_u))
}

/// Ascend `U(h(eta))` by projected gradient with implicit derivatives.
/// Returns the best iterate seen; `grad_norm` reports the final projected
/// gradient magnitude.
pub fn optimize_strategy(
    family: &dyn StrategyFamily,
    eta0: Option<DVector<f64>>,
    ctx: &FamilyContext<'_>,
    cfg: &OptimizerConfig,
) -> Result<OptimizeOutcome> {
    let mut eta = family.project(eta0.unwrap_or_else(|| family.initial()));
    let mut best_val = evaluate(family, &eta, ctx).map_err(|e| Error::OptimizerStep {
        eta: eta.iter().copied().collect(),
        source: Box::new(e),
    })?;
    let mut best_eta = eta.clone();
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let grad = family
            .implicit_gradient(&eta, ctx)
            .map_err(|e| Error::OptimizerStep {
                eta: eta.iter().copied().collect(),
                source: Box::new(e),
            })?;
        // Projected-gradient magnitude: how far a small ascent step actually
        // moves within the feasible set.
        let probe = 1e-6;
        let moved = family.project(&eta + probe * &grad);
        grad_norm = (&moved - &eta).norm() / probe;
        if grad_norm <= cfg.grad_tol {
            break;
        }
        let mut step_eta = family.project(&eta + cfg.step * &grad);
        let mut step_val = evaluate(family, &step_eta, ctx)?;
        if cfg.line_search {
            // Expand while the objective keeps improving, then settle.
            let mut t = cfg.step;
            for _ in 0..24 {
                let t2 = t * 2.0;
                let cand = family.project(&eta + t2 * &grad);
                let val = evaluate(family, &cand, ctx)?;
                if val > step_val {
                    step_val = val;
                    step_eta = cand;
                    t = t2;
                } else {
                    break;
                }
            }
            if step_val <= best_val {
                // Shrink when the base step overshoots.
                let mut t = cfg.step;
                for _ in 0..24 {
                    t *= 0.5;
                    let cand = family.project(&eta + t * &grad);
                    let val = evaluate(family, &cand, ctx)?;
                    if val > step_val {
                        step_val = val;
                        step_eta = cand;
                        break;
                    }
                }
            }
        }
        let stalled = (&step_eta - &eta).norm() <= 1e-14;
        eta = step_eta;
        if step_val > best_val {
            best_val = step_val;
            best_eta = eta.clone();
        }
        if stalled {
            break;
        }
    }
    let theta = equilibrium_model(
        family.strategy(&best_eta)?.as_ref(),
        ctx.alpha,
        ctx.collective_base,
        ctx.ambient_base,
        ctx.loss,
        ctx.solver,
    )?;
    Ok(OptimizeOutcome {
        eta: best_eta,
        model: theta,
        utility: best_val,
        grad_norm,
        iterations,
    })
}

fn evaluate(
    family: &dyn StrategyFamily,
    eta: &DVector<f64>,
    ctx: &FamilyContext<'_>,
) -> Result<f64> {
    let strategy = family.strategy(eta)?;
    population_utility(
        strategy.as_ref(),
        ctx.alpha,
        ctx.collective_base,
        ctx.ambient_base,
        ctx.loss,
        ctx.utility,
        ctx.solver,
    )
}

/// Utility of the family at `eta` (the quantity `optimize_strategy` ascends).
pub fn family_utility(
    family: &dyn StrategyFamily,
    eta: &DVector<f64>,
    ctx: &FamilyContext<'_>,
) -> Result<f64> {
    evaluate(family, eta, ctx)
}

/// Myopically stationary strategy/model pair: `eta` is stationary for the
/// agents' utility at the frozen equilibrium model it induces. This is the
/// selfish (no-steering) equilibrium of a parametric family.
///
/// Damped dynamics: one projected myopic ascent step per retraining round.
/// Small interleaved steps settle at the stable stationary point even in
/// zero-sum settings where full best-response iteration would cycle. The
/// start is perturbed deterministically so saddle initializations (all
/// options tied) break toward a stable equilibrium, and the step length
/// grows while consecutive gradients stay aligned.
pub fn selfish_equilibrium(
    family: &dyn StrategyFamily,
    ctx: &FamilyContext<'_>,
    cfg: &OptimizerConfig,
) -> Result<(DVector<f64>, Model)> {
    let dim = family.dim();
    let mut eta = family.initial();
    for j in 0..dim {
        eta[j] += 1e-6 * if j % 2 == 0 { 1.0 } else { -1.0 };
    }
    eta = family.project(eta);
    let refit = |eta: &DVector<f64>| -> Result<Model> {
        equilibrium_model(
            family.strategy(eta)?.as_ref(),
            ctx.alpha,
            ctx.collective_base,
            ctx.ambient_base,
            ctx.loss,
            ctx.solver,
        )
    };
    let mut theta = refit(&eta)?;
    let mut previous_grad: Option<DVector<f64>> = None;
    let mut boost = 1.0_f64;
    for _ in 0..20_000 {
        let grad = family.myopic_gradient(&eta, &theta, ctx)?;
        // Accelerate monotone approaches, reset on direction reversals.
        if let Some(prev) = &previous_grad {
            if grad.dot(prev) > 0.0 {
                boost = (boost * 1.2).min(64.0);
            } else {
                boost = 1.0;
            }
        }
        previous_grad = Some(grad.clone());
        let next_eta = family.project(&eta + cfg.step * boost * &grad);
        let next_theta = refit(&next_eta)?;
        let moved = (&next_eta - &eta).norm() + next_theta.distance(&theta);
        eta = next_eta;
        theta = next_theta;
        if moved <= 1e-11 {
            break;
        }
    }
    Ok((eta, theta))
}

/// Numerical strong-concavity estimate of `e(t) = U((1-t) eta_a + t eta_b)`
/// along the segment between two parameters: the most optimistic (smallest
/// magnitude) second difference over a coarse grid, negated.
pub fn segment_concavity_estimate(
    family: &dyn StrategyFamily,
    eta_a: &DVector<f64>,
    eta_b: &DVector<f64>,
    ctx: &FamilyContext<'_>,
) -> Result<f64> {
    let e = |t: f64| -> Result<f64> {
        let eta = eta_a * (1.0 - t) + eta_b * t;
        family_utility(family, &family.project(eta), ctx)
    };
    let h = 0.05;
    let mut min_curvature = f64::INFINITY;
    for i in 1..=9 {
        let t = i as f64 / 10.0;
        let second = (e(t + h)? - 2.0 * e(t)? + e(t - h)?) / (h * h);
        min_curvature = min_curvature.min(-second);
    }
    Ok(min_curvature)
}

/// Full diagnostic bundle for one pair of equilibria plus a mixture context.
#[allow(clippy::too_many_arguments)]
pub fn alignment_report(
    selfish: (&dyn Strategy, &Model),
    sharp: (&dyn Strategy, &Model),
    mixture_alpha: f64,
    base: &EmpiricalDistribution,
    loss: &dyn Loss,
    utility: &dyn Utility,
    solver: &SolverConfig,
    validation_tol: f64,
) -> Result<AlignmentReport> {
    let (selfish_strategy, theta_star) = selfish;
    let (sharp_strategy, _) = sharp;
    let dist_star = selfish_strategy.apply(base, theta_star)?;
    let dist_sharp_at_star = sharp_strategy.apply(base, theta_star)?;
    let phi = alignment_phi(&dist_star, &dist_sharp_at_star, theta_star, loss, utility)?;
    let benefit =
        benefit_of_coordination(selfish, sharp, base, loss, utility, solver, validation_tol)?;
    let grad_u_at_star = expected_grad(&dist_star, as_objective(utility), theta_star);
    let grad_l_at_sharp = expected_grad(&dist_sharp_at_star, loss_objective(loss), theta_star);
    let hessian_star = expected_hessian(&dist_star, loss, theta_star)?;

    // Mixture context: the sharp strategy scaled to fraction alpha.
    let theta_alpha = equilibrium_model(sharp_strategy, mixture_alpha, base, base, loss, solver)?;
    let d_h = sharp_strategy.apply(base, &theta_alpha)?;
    let mix_dist = mix_with_base(&d_h, mixture_alpha, base)?;
    let psi = alignment_psi(&d_h, &mix_dist, &theta_alpha, loss, utility)?;
    let du = if mixture_alpha < 1.0 - 1e-6 {
        du_dalpha(&d_h, &mix_dist, &theta_alpha, mixture_alpha, loss, utility)?
    } else {
        f64::NAN
    };
    Ok(AlignmentReport {
        phi,
        psi,
        benefit,
        grad_u_at_star,
        grad_l_at_sharp,
        hessian_star,
        du_dalpha: du,
    })
}

// ---------------------------------------------------------------------------
// Shipped families
// ---------------------------------------------------------------------------

/// Translation family: every collective member reports
/// `x + sum_j eta_j * direction_j`. Optional box bounds on `eta`.
pub struct ShiftFamily {
    pub directions: Vec<DVector<f64>>,
    pub bounds: Option<Vec<(f64, f64)>>,
    pub start: DVector<f64>,
}

impl ShiftFamily {
    pub fn new(directions: Vec<DVector<f64>>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::InvalidParameter(
                "shift family needs at least one direction".into(),
            ));
        }
        let m = directions.len();
        Ok(ShiftFamily {
            directions,
            bounds: None,
            start: DVector::zeros(m),
        })
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.len() != self.directions.len() {
            return Err(Error::DimensionMismatch {
                expected: self.directions.len(),
                got: bounds.len(),
                context: "bounds per shift parameter",
            });
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn with_start(mut self, start: DVector<f64>) -> Self {
        self.start = start;
        self
    }

    /// Per-sample displacement derivative with respect to `eta_j`, padded
    /// with a zero label component.
    fn padded_direction(&self, j: usize) -> DVector<f64> {
        let d = self.directions[j].len();
        let mut v = DVector::zeros(d + 1);
        v.rows_mut(0, d).copy_from(&self.directions[j]);
        v
    }
}

impl StrategyFamily for ShiftFamily {
    fn name(&self) -> &'static str {
        "shift"
    }

    fn dim(&self) -> usize {
        self.directions.len()
    }

    fn initial(&self) -> DVector<f64> {
        self.start.clone()
    }

    fn strategy(&self, eta: &DVector<f64>) -> Result<Arc<dyn Strategy>> {
        Ok(Arc::new(ParametricShift::new(
            eta.clone(),
            self.directions.clone(),
        )?))
    }

    fn project(&self, mut eta: DVector<f64>) -> DVector<f64> {
        if let Some(bounds) = &self.bounds {
            for (j, (lo, hi)) in bounds.iter().enumerate() {
                eta[j] = eta[j].clamp(*lo, *hi);
            }
        }
        eta
    }

    fn implicit_gradient(
        &self,
        eta: &DVector<f64>,
        ctx: &FamilyContext<'_>,
    ) -> Result<DVector<f64>> {
        let strategy = self.strategy(eta)?;
        let theta = equilibrium_model(
            strategy.as_ref(),
            ctx.alpha,
            ctx.collective_base,
            ctx.ambient_base,
            ctx.loss,
            ctx.solver,
        )?;
        let d_h = strategy.apply(ctx.collective_base, &theta)?;
        let mix_dist = mix_with_base(&d_h, ctx.alpha, ctx.ambient_base)?;
        let hess = expected_hessian(&mix_dist, ctx.loss, &theta)?;
        let chol = hess.clone().cholesky().ok_or(Error::IllConditioned {
            cond: f64::INFINITY,
            limit: crate::population::COND_LIMIT,
        })?;
        let grad_u_theta = expected_grad(&d_h, as_objective(ctx.utility), &theta);

        let mut grad = DVector::zeros(self.dim());
        for j in 0..self.dim() {
            let dir = self.padded_direction(j);
            // Direct term: the utility's dependence on the reported data.
            let direct = crate::population::expected_value(
                &d_h,
                |z, t| ctx.utility.grad_z(z, t).dot(&dir),
                &theta,
            );
            // Equilibrium response: d theta* / d eta_j.
            let cross = crate::population::expected_vector(
                &d_h,
                |z, t| ctx.loss.cross_theta_z(z, t) * &dir,
                &theta,
            ) * ctx.alpha;
            let dtheta = -chol.solve(&cross);
            grad[j] = direct + grad_u_theta.dot(&dtheta);
        }
        Ok(grad)
    }

    fn myopic_gradient(
        &self,
        eta: &DVector<f64>,
        theta: &Model,
        ctx: &FamilyContext<'_>,
    ) -> Result<DVector<f64>> {
        let d_h = self.strategy(eta)?.apply(ctx.collective_base, theta)?;
        let mut grad = DVector::zeros(self.dim());
        for j in 0..self.dim() {
            let dir = self.padded_direction(j);
            grad[j] = crate::population::expected_value(
                &d_h,
                |z, t| ctx.utility.grad_z(z, t).dot(&dir),
                theta,
            );
        }
        Ok(grad)
    }

    fn fd_gradient(
        &self,
        eta: &DVector<f64>,
        step: f64,
        ctx: &FamilyContext<'_>,
    ) -> Result<DVector<f64>> {
        let mut grad = DVector::zeros(self.dim());
        let mut probe = eta.clone();
        for j in 0..self.dim() {
            probe[j] = eta[j] + step;
            let plus = family_utility(self, &probe, ctx)?;
            probe[j] = eta[j] - step;
            let minus = family_utility(self, &probe, ctx)?;
            probe[j] = eta[j];
            grad[j] = (plus - minus) / (2.0 * step);
        }
        Ok(grad)
    }
}

/// Anchor-reassignment family: parameters are the simplex weights `w` over a
/// fixed anchor set.
pub struct SimplexFamily {
    pub anchors: Vec<DVector<f64>>,
}

impl SimplexFamily {
    pub fn new(anchors: Vec<DVector<f64>>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::InvalidParameter(
                "simplex family needs at least two anchors".into(),
            ));
        }
        Ok(SimplexFamily { anchors })
    }

    fn tangent_project(&self, mut g: DVector<f64>) -> DVector<f64> {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        for v in g.iter_mut() {
            *v -= mean;
        }
        g
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j as f64 + 1.0);
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    DVector::from_iterator(n, v.iter().map(|&x| (x - tau).max(0.0)))
}

impl StrategyFamily for SimplexFamily {
    fn name(&self) -> &'static str {
        "simplex"
    }

    fn dim(&self) -> usize {
        self.anchors.len()
    }

    fn initial(&self) -> DVector<f64> {
        DVector::from_element(self.anchors.len(), 1.0 / self.anchors.len() as f64)
    }

    fn strategy(&self, eta: &DVector<f64>) -> Result<Arc<dyn Strategy>> {
        Ok(Arc::new(SimplexReassign::new(
            self.anchors.clone(),
            project_simplex(eta),
        )?))
    }

    fn project(&self, eta: DVector<f64>) -> DVector<f64> {
        project_simplex(&eta)
    }

    fn implicit_gradient(
        &self,
        eta: &DVector<f64>,
        ctx: &FamilyContext<'_>,
    ) -> Result<DVector<f64>> {
        let strategy = self.strategy(eta)?;
        let theta = equilibrium_model(
            strategy.as_ref(),
            ctx.alpha,
            ctx.collective_base,
            ctx.ambient_base,
            ctx.loss,
            ctx.solver,
        )?;
        let d_h = strategy.apply(ctx.collective_base, &theta)?;
        let mix_dist = mix_with_base(&d_h, ctx.alpha, ctx.ambient_base)?;
        let hess = expected_hessian(&mix_dist, ctx.loss, &theta)?;
        let chol = hess.cholesky().ok_or(Error::IllConditioned {
            cond: f64::INFINITY,
            limit: crate::population::COND_LIMIT,
        })?;
        let grad_u_theta = expected_grad(&d_h, as_objective(ctx.utility), &theta);
        let mut grad = DVector::zeros(self.dim());
        for j in 0..self.dim() {
            let anchor = crate::population::Sample::new(self.anchors[j].clone(), 0.0);
            let direct = ctx.utility.value(&anchor, &theta);
            let dg = ctx.loss.grad_theta(&anchor, &theta) * ctx.alpha;
            let dtheta = -chol.solve(&dg);
            grad[j] = direct + grad_u_theta.dot(&dtheta);
        }
        Ok(self.tangent_project(grad))
    }

    fn myopic_gradient(
        &self,
        _eta: &DVector<f64>,
        theta: &Model,
        ctx: &FamilyContext<'_>,
    ) -> Result<DVector<f64>> {
        let mut grad = DVector::zeros(self.dim());
        for j in 0..self.dim() {
            let anchor = crate::population::Sample::new(self.anchors[j].clone(), 0.0);
            grad[j] = ctx.utility.value(&anchor, theta);
        }
        Ok(self.tangent_project(grad))
    }

    fn fd_gradient(
        &self,
        eta: &DVector<f64>,
        step: f64,
        ctx: &FamilyContext<'_>,
    ) -> Result<DVector<f64>> {
        // Differences along the simplex tangent directions e_j - 1/m, which
        // is exactly what the tangent-projected implicit gradient reports.
        let m = self.dim() as f64;
        let mut grad = DVector::zeros(self.dim());
        for j in 0..self.dim() {
            let mut dir = DVector::from_element(self.dim(), -1.0 / m);
            dir[j] += 1.0;
            let plus = family_utility(self, &(eta + step * &dir), ctx)?;
            let minus = family_utility(self, &(eta - step * &dir), ctx)?;
            grad[j] = (plus - minus) / (2.0 * step);
        }
        Ok(self.tangent_project(grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::SquaredScalar;
    use crate::utility::{AnchorPreference, TargetModel};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn triangle_anchors(r: f64) -> Vec<DVector<f64>> {
        let s = 3.0_f64.sqrt() / 2.0;
        vec![
            dvector![-s * r, -0.5 * r],
            dvector![s * r, -0.5 * r],
            dvector![0.0, r],
        ]
    }

    fn triangle_utility(r: f64) -> AnchorPreference {
        let a = triangle_anchors(r);
        AnchorPreference::new(a[0].clone(), a[1].clone())
    }

    fn anchor_base(r: f64) -> EmpiricalDistribution {
        EmpiricalDistribution::uniform(
            triangle_anchors(r)
                .into_iter()
                .map(|p| crate::population::Sample::new(p, 0.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn population_utility_triangle_closed_forms() {
        let r = 1.0;
        let base = anchor_base(r);
        let loss = SquaredScalar::new(2);
        let utility = triangle_utility(r);
        let solver = SolverConfig::default();
        let family = SimplexFamily::new(triangle_anchors(r)).unwrap();

        let uniform = family.strategy(&family.initial()).unwrap();
        let u_star = population_utility(
            uniform.as_ref(),
            1.0,
            &base,
            &base,
            &loss,
            &utility,
            &solver,
        )
        .unwrap();
        assert_abs_diff_eq!(u_star, -3.0, epsilon = 1e-9);

        let sharp = family.strategy(&dvector![0.5, 0.5, 0.0]).unwrap();
        let u_sharp = population_utility(
            sharp.as_ref(),
            1.0,
            &base,
            &base,
            &loss,
            &utility,
            &solver,
        )
        .unwrap();
        assert_abs_diff_eq!(u_sharp, -2.25, epsilon = 1e-9);
    }

    #[test]
    fn one_dim_target_model_mixture_utility() {
        // theta*_alpha = mu0 + alpha * delta; U = -(theta*_alpha - 0.5)^2.
        let base = EmpiricalDistribution::from_scalars(&[-1.0, 1.0]).unwrap();
        let loss = SquaredScalar::new(1);
        let utility = TargetModel::new(Model::scalar(0.5));
        let solver = SolverConfig::default();
        let shift = ParametricShift::along(1.0, dvector![1.0]);
        let u = population_utility(&shift, 0.3, &base, &base, &loss, &utility, &solver).unwrap();
        assert_abs_diff_eq!(u, -0.04, epsilon = 1e-9);
    }

    #[test]
    fn psi_and_du_dalpha_closed_forms() {
        let base = EmpiricalDistribution::from_scalars(&[-1.0, 1.0]).unwrap();
        let loss = SquaredScalar::new(1);
        let utility = TargetModel::new(Model::scalar(0.5));
        let solver = SolverConfig::default();
        let shift = ParametricShift::along(1.0, dvector![1.0]);

        for (alpha, expected_psi) in [(0.3, -0.28), (0.6, 0.08)] {
            let theta = equilibrium_model(&shift, alpha, &base, &base, &loss, &solver).unwrap();
            assert_abs_diff_eq!(theta.theta[0], alpha, epsilon = 1e-9);
            let d_h = shift.apply(&base, &theta).unwrap();
            let mix = mix_with_base(&d_h, alpha, &base).unwrap();
            let psi = alignment_psi(&d_h, &mix, &theta, &loss, &utility).unwrap();
            assert_abs_diff_eq!(psi, expected_psi, epsilon = 1e-9);
        }

        let alpha = 0.3;
        let theta = equilibrium_model(&shift, alpha, &base, &base, &loss, &solver).unwrap();
        let d_h = shift.apply(&base, &theta).unwrap();
        let mix = mix_with_base(&d_h, alpha, &base).unwrap();
        let du = du_dalpha(&d_h, &mix, &theta, alpha, &loss, &utility).unwrap();
        assert_abs_diff_eq!(du, 0.4, epsilon = 1e-9);
    }

    #[test]
    fn du_dalpha_guards_alpha_near_one() {
        let base = EmpiricalDistribution::from_scalars(&[-1.0, 1.0]).unwrap();
        let loss = SquaredScalar::new(1);
        let utility = TargetModel::new(Model::scalar(0.5));
        let d = base.clone();
        assert!(du_dalpha(&d, &base, &Model::scalar(0.0), 1.0, &loss, &utility).is_err());
    }

    #[test]
    fn optimizer_finds_target_shift() {
        // delta_sharp = theta_t / alpha = 5/3 drives the model to target.
        let base = EmpiricalDistribution::from_scalars(&[-1.0, 1.0]).unwrap();
        let loss = SquaredScalar::new(1);
        let utility = TargetModel::new(Model::scalar(0.5));
        let solver = SolverConfig::default();
        let family = ShiftFamily::new(vec![dvector![1.0]]).unwrap();
        let ctx = FamilyContext::new(0.3, &base, &base, &loss, &utility, &solver);
        let out = optimize_strategy(&family, None, &ctx, &OptimizerConfig::default()).unwrap();
        assert_abs_diff_eq!(out.eta[0], 5.0 / 3.0, epsilon = 1e-3);
        assert!(out.utility > -1e-6, "utility {}", out.utility);
    }

    #[test]
    fn optimizer_finds_triangle_sharp_weights() {
        let r = 1.0;
        let base = anchor_base(r);
        let loss = SquaredScalar::new(2);
        let utility = triangle_utility(r);
        let solver = SolverConfig::default();
        let family = SimplexFamily::new(triangle_anchors(r)).unwrap();
        let ctx = FamilyContext::new(1.0, &base, &base, &loss, &utility, &solver);
        let out = optimize_strategy(&family, None, &ctx, &OptimizerConfig::default()).unwrap();
        assert_abs_diff_eq!(out.eta[0], 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(out.eta[1], 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(out.eta[2], 0.0, epsilon = 1e-3);
        assert_abs_diff_eq!(out.utility, -2.25, epsilon = 1e-5);
    }

    #[test]
    fn implicit_gradients_match_finite_differences() {
        let base = EmpiricalDistribution::from_scalars(&[-1.0, 1.0]).unwrap();
        let loss = SquaredScalar::new(1);
        let utility = TargetModel::new(Model::scalar(0.5));
        let solver = SolverConfig::default();
        let family = ShiftFamily::new(vec![dvector![1.0]]).unwrap();
        let ctx = FamilyContext::new(0.3, &base, &base, &loss, &utility, &solver);
        let eta = dvector![0.7];
        let implicit = family.implicit_gradient(&eta, &ctx).unwrap();
        let fd = family.fd_gradient(&eta, 1e-4, &ctx).unwrap();
        let rel = (&implicit - &fd).norm() / implicit.norm().max(fd.norm()).max(1.0);
        assert!(rel <= 1e-4, "rel err {rel}");

        let r = 1.0;
        let tri_base = anchor_base(r);
        let tri_loss = SquaredScalar::new(2);
        let tri_utility = triangle_utility(r);
        let tri_family = SimplexFamily::new(triangle_anchors(r)).unwrap();
        let tri_ctx =
            FamilyContext::new(1.0, &tri_base, &tri_base, &tri_loss, &tri_utility, &solver);
        let w = dvector![0.4, 0.35, 0.25];
        let implicit = tri_family.implicit_gradient(&w, &tri_ctx).unwrap();
        let fd = tri_family.fd_gradient(&w, 1e-5, &tri_ctx).unwrap();
        let rel = (&implicit - &fd).norm() / implicit.norm().max(fd.norm()).max(1.0);
        assert!(rel <= 1e-4, "simplex rel err {rel}");
    }

    #[test]
    fn projection_onto_simplex() {
        let w = project_simplex(&dvector![0.6, 0.6, 0.6]);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[0], 1.0 / 3.0, epsilon = 1e-12);
        let w2 = project_simplex(&dvector![2.0, -1.0, 0.0]);
        assert_abs_diff_eq!(w2[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w2[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn triangle_phi_psi_pipeline_values() {
        // The inverse-curvature pairing at the triangle equilibria evaluates
        // to -r^2, and the utility restricted to the mixing segment between
        // the two equilibrium weight vectors is r^2/2-strongly concave, so
        // the benefit bound phi^2 / (2 gamma) is r^2. Checked against the
        // segment derivative e'(0) = -phi.
        for r in [1.0_f64, 2.0] {
            let base = anchor_base(r);
            let loss = SquaredScalar::new(2);
            let utility = triangle_utility(r);
            let solver = SolverConfig::default();
            let family = SimplexFamily::new(triangle_anchors(r)).unwrap();
            let w_star = family.initial();
            let w_sharp = dvector![0.5, 0.5, 0.0];
            let theta_star = Model::from_slice(&[0.0, 0.0]);

            let star = family.strategy(&w_star).unwrap();
            let sharp = family.strategy(&w_sharp).unwrap();
            let d_star = star.apply(&base, &theta_star).unwrap();
            let d_sharp = sharp.apply(&base, &theta_star).unwrap();
            let phi = alignment_phi(&d_star, &d_sharp, &theta_star, &loss, &utility).unwrap();
            assert_abs_diff_eq!(phi, -r * r, epsilon = 1e-10);

            let ctx = FamilyContext::new(1.0, &base, &base, &loss, &utility, &solver);
            let e = |t: f64| {
                let w = &w_star * (1.0 - t) + &w_sharp * t;
                family_utility(&family, &family.project(w), &ctx).unwrap()
            };
            let de0 = (e(1e-5) - e(-1e-5)) / 2e-5;
            assert_abs_diff_eq!(de0, -phi, epsilon = 1e-4);

            let gamma_seg =
                segment_concavity_estimate(&family, &w_star, &w_sharp, &ctx).unwrap();
            assert_abs_diff_eq!(gamma_seg, r * r / 2.0, epsilon = 1e-5);
            let bound = phi_bound_check(phi, gamma_seg).unwrap();
            assert_abs_diff_eq!(bound, r * r, epsilon = 1e-4);
        }
    }

    #[test]
    fn phi_bound_check_values() {
        assert_abs_diff_eq!(phi_bound_check(-2.0, 2.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(phi_bound_check(0.0, 2.0).unwrap(), 0.0, epsilon = 1e-15);
        assert!(phi_bound_check(1.0, 0.0).is_err());
    }
}
