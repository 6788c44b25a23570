//! Agent data-modification strategies `h_theta`.
//!
//! Every variant implements the [`Strategy`] trait and is constructible by
//! name through [`registry`], so experiment configs can select behavior at
//! runtime. Pushforwards are index-aligned: sample `i` of the output is the
//! strategy applied to sample `i` of the base (the simplex reassignment is
//! the one exception and documents it).

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::learner::{fit_from, SolverConfig};
use crate::loss::Loss;
use crate::population::{EmpiricalDistribution, Model, Sample};

/// A map from base data to reported data, possibly depending on the deployed
/// model.
pub trait Strategy: Send + Sync {
    /// Registry name of the variant.
    fn name(&self) -> &'static str;

    /// Pushforward of `base` under the strategy at deployed model `theta`.
    fn apply(&self, base: &EmpiricalDistribution, theta: &Model) -> Result<EmpiricalDistribution>;

    /// Whether the pushforward ignores `theta`.
    fn is_model_independent(&self) -> bool;
}

/// Level-0 behavior: report data unchanged.
#[derive(Debug, Clone, Default)]
pub struct Identity;

impl Strategy for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn apply(&self, base: &EmpiricalDistribution, _theta: &Model) -> Result<EmpiricalDistribution> {
        Ok(base.clone())
    }

    fn is_model_independent(&self) -> bool {
        true
    }
}

/// Closed-form best response to a linear score under quadratic modification
/// cost: `x_S -> x_S - eps * theta_S` on the strategic coordinate set `S`.
///
/// `eps = 0` is allowed and collapses to the identity.
#[derive(Debug, Clone)]
pub struct QuadraticBestResponse {
    pub epsilon: f64,
    pub strategic: Vec<usize>,
}

impl QuadraticBestResponse {
    pub fn new(epsilon: f64, strategic: Vec<usize>) -> Result<Self> {
        if epsilon < 0.0 {
            return Err(Error::InvalidParameter("epsilon must be >= 0".into()));
        }
        if strategic.is_empty() {
            return Err(Error::InvalidParameter(
                "strategic coordinate set must be nonempty".into(),
            ));
        }
        Ok(QuadraticBestResponse { epsilon, strategic })
    }
}

impl Strategy for QuadraticBestResponse {
    fn name(&self) -> &'static str {
        "quadratic-best-response"
    }

    fn apply(&self, base: &EmpiricalDistribution, theta: &Model) -> Result<EmpiricalDistribution> {
        let d = base.dim();
        for &s in &self.strategic {
            if s >= d {
                return Err(Error::InvalidParameter(format!(
                    "strategic coordinate {s} out of range for dimension {d}"
                )));
            }
            if s >= theta.dim() {
                return Err(Error::DimensionMismatch {
                    expected: s + 1,
                    got: theta.dim(),
                    context: "model dimension vs strategic coordinate",
                });
            }
        }
        let samples = base
            .samples()
            .iter()
            .map(|z| {
                let mut x = z.x.clone();
                for &s in &self.strategic {
                    x[s] -= self.epsilon * theta.theta[s];
                }
                Sample::new(x, z.y)
            })
            .collect();
        EmpiricalDistribution::new(samples, base.weights().to_vec())
    }

    fn is_model_independent(&self) -> bool {
        self.epsilon == 0.0
    }
}

/// Replace each label with a target function of the features; features stay
/// untouched.
pub struct LabelTarget {
    target: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>,
}

impl LabelTarget {
    pub fn new(target: Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>) -> Self {
        LabelTarget { target }
    }
}

impl Strategy for LabelTarget {
    fn name(&self) -> &'static str {
        "label-target"
    }

    fn apply(&self, base: &EmpiricalDistribution, _theta: &Model) -> Result<EmpiricalDistribution> {
        let samples = base
            .samples()
            .iter()
            .map(|z| Sample::new(z.x.clone(), (self.target)(&z.x)))
            .collect();
        EmpiricalDistribution::new(samples, base.weights().to_vec())
    }

    fn is_model_independent(&self) -> bool {
        true
    }
}

/// Fixed translation of the strategic coordinates:
/// `x <- x + sum_j eta_j * direction_j`, directions zero off `S`.
#[derive(Debug, Clone)]
pub struct ParametricShift {
    pub eta: DVector<f64>,
    pub directions: Vec<DVector<f64>>,
}

impl ParametricShift {
    pub fn new(eta: DVector<f64>, directions: Vec<DVector<f64>>) -> Result<Self> {
        if eta.len() != directions.len() {
            return Err(Error::DimensionMismatch {
                expected: directions.len(),
                got: eta.len(),
                context: "shift parameter vs direction count",
            });
        }
        Ok(ParametricShift { eta, directions })
    }

    /// Scalar-strength shift along one direction.
    pub fn along(eta: f64, direction: DVector<f64>) -> Self {
        ParametricShift {
            eta: DVector::from_element(1, eta),
            directions: vec![direction],
        }
    }

    /// Total displacement applied to every sample.
    pub fn displacement(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.directions[0].len());
        for (j, dir) in self.directions.iter().enumerate() {
            v += dir * self.eta[j];
        }
        v
    }
}

impl Strategy for ParametricShift {
    fn name(&self) -> &'static str {
        "parametric-shift"
    }

    fn apply(&self, base: &EmpiricalDistribution, _theta: &Model) -> Result<EmpiricalDistribution> {
        let shift = self.displacement();
        if shift.len() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: shift.len(),
                context: "shift direction dimension",
            });
        }
        let samples = base
            .samples()
            .iter()
            .map(|z| Sample::new(&z.x + &shift, z.y))
            .collect();
        EmpiricalDistribution::new(samples, base.weights().to_vec())
    }

    fn is_model_independent(&self) -> bool {
        true
    }
}

/// Direction used by the fixed-strategy experiments: the strategic-feature
/// mean of the label-0 sub-population, zero elsewhere.
pub fn label0_mean_direction(
    base: &EmpiricalDistribution,
    strategic: &[usize],
) -> Result<DVector<f64>> {
    let cond = base.conditional_on_label(0.0)?;
    let mean = cond.mean_x();
    let mut dir = DVector::zeros(base.dim());
    for &s in strategic {
        if s >= base.dim() {
            return Err(Error::InvalidParameter(format!(
                "strategic coordinate {s} out of range"
            )));
        }
        dir[s] = mean[s];
    }
    Ok(dir)
}

/// Move all mass onto a fixed anchor set with probabilities `w`, ignoring
/// both the deployed model and the base samples. The output has one sample
/// per anchor, so this is the one strategy whose pushforward is not
/// index-aligned with the base.
#[derive(Debug, Clone)]
pub struct SimplexReassign {
    pub anchors: Vec<DVector<f64>>,
    pub weights: DVector<f64>,
}

impl SimplexReassign {
    pub fn new(anchors: Vec<DVector<f64>>, weights: DVector<f64>) -> Result<Self> {
        if anchors.is_empty() || anchors.len() != weights.len() {
            return Err(Error::InvalidParameter(
                "anchor list and weight vector must match and be nonempty".into(),
            ));
        }
        if weights.iter().any(|w| *w < -crate::population::WEIGHT_TOL) {
            return Err(Error::InvalidParameter(
                "simplex weights must be nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > crate::population::WEIGHT_TOL {
            return Err(Error::InvalidParameter(format!(
                "simplex weights sum to {sum}, expected 1"
            )));
        }
        Ok(SimplexReassign { anchors, weights })
    }
}

impl Strategy for SimplexReassign {
    fn name(&self) -> &'static str {
        "simplex-reassign"
    }

    fn apply(&self, _base: &EmpiricalDistribution, _theta: &Model) -> Result<EmpiricalDistribution> {
        let samples = self
            .anchors
            .iter()
            .map(|p| Sample::new(p.clone(), 0.0))
            .collect();
        let weights: Vec<f64> = self.weights.iter().map(|w| w.max(0.0)).collect();
        let total: f64 = weights.iter().sum();
        EmpiricalDistribution::new(samples, weights.iter().map(|w| w / total).collect())
    }

    fn is_model_independent(&self) -> bool {
        true
    }
}

/// Level-k reasoning: best-respond to the model a population of
/// level-(k-1) thinkers would induce.
///
/// Computed through the model chain `theta^j = fit(apply(level1, base,
/// theta^{j-1}))` rather than literal recursion over distributions; the two
/// agree and the chain costs O(k) fits.
pub struct LevelK {
    pub k: usize,
    pub level_one: Arc<dyn Strategy>,
    pub loss: Arc<dyn Loss>,
    pub solver: SolverConfig,
}

impl LevelK {
    pub fn new(k: usize, level_one: Arc<dyn Strategy>, loss: Arc<dyn Loss>, solver: SolverConfig) -> Self {
        LevelK {
            k,
            level_one,
            loss,
            solver,
        }
    }
}

impl Strategy for LevelK {
    fn name(&self) -> &'static str {
        "level-k"
    }

    fn apply(&self, base: &EmpiricalDistribution, theta: &Model) -> Result<EmpiricalDistribution> {
        level_k_apply(
            theta,
            self.k,
            base,
            self.loss.as_ref(),
            self.level_one.as_ref(),
            &self.solver,
        )
    }

    fn is_model_independent(&self) -> bool {
        self.k == 0 || self.level_one.is_model_independent()
    }
}

/// The hypothetical-model chain `[theta^0 = theta, theta^1, ..,
/// theta^{k-1}]` with `theta^j = fit(apply(level1, base, theta^{j-1}))`.
pub fn level_k_model_chain(
    theta: &Model,
    k: usize,
    base: &EmpiricalDistribution,
    loss: &dyn Loss,
    level_one: &dyn Strategy,
    solver: &SolverConfig,
) -> Result<Vec<Model>> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "model chain requires k >= 1".into(),
        ));
    }
    let mut chain = vec![theta.clone()];
    for j in 1..k {
        let prev = &chain[j - 1];
        let shifted = level_one.apply(base, prev).map_err(|e| Error::ChainFit {
            index: j,
            source: Box::new(e),
        })?;
        let next = fit_from(&shifted, loss, solver, prev).map_err(|e| Error::ChainFit {
            index: j,
            source: Box::new(e),
        })?;
        chain.push(next);
    }
    Ok(chain)
}

/// Distribution induced by level-k thinkers at deployed model `theta`.
/// k = 0 is the non-strategic base.
pub fn level_k_apply(
    theta: &Model,
    k: usize,
    base: &EmpiricalDistribution,
    loss: &dyn Loss,
    level_one: &dyn Strategy,
    solver: &SolverConfig,
) -> Result<EmpiricalDistribution> {
    if k == 0 {
        return Ok(base.clone());
    }
    let chain = level_k_model_chain(theta, k, base, loss, level_one, solver)?;
    level_one.apply(base, chain.last().expect("chain nonempty"))
}

/// Construction of strategies by registry name. Parameters irrelevant to a
/// kind are ignored by it; missing required parameters are errors.
pub mod registry {
    use super::*;

    /// Parameter bag for [`build`]. Construct with `Default::default()` and
    /// set what the chosen kind needs.
    #[derive(Default)]
    pub struct StrategyParams {
        pub epsilon: Option<f64>,
        pub strategic: Option<Vec<usize>>,
        pub eta: Option<DVector<f64>>,
        pub directions: Option<Vec<DVector<f64>>>,
        pub anchors: Option<Vec<DVector<f64>>>,
        pub simplex_weights: Option<DVector<f64>>,
        pub label_target: Option<Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>>,
        pub level: Option<usize>,
        pub level_one: Option<Arc<dyn Strategy>>,
        pub loss: Option<Arc<dyn Loss>>,
        pub solver: Option<SolverConfig>,
    }

    pub const NAMES: &[&str] = &[
        "identity",
        "quadratic-best-response",
        "level-k",
        "label-target",
        "parametric-shift",
        "simplex-reassign",
    ];

    pub fn build(kind: &str, params: StrategyParams) -> Result<Arc<dyn Strategy>> {
        let missing = |what: &str| {
            Error::InvalidParameter(format!("strategy '{kind}' requires parameter '{what}'"))
        };
        match kind {
            "identity" => Ok(Arc::new(Identity)),
            "quadratic-best-response" => {
                let eps = params.epsilon.ok_or_else(|| missing("epsilon"))?;
                let s = params.strategic.ok_or_else(|| missing("strategic"))?;
                Ok(Arc::new(QuadraticBestResponse::new(eps, s)?))
            }
            "level-k" => {
                let k = params.level.ok_or_else(|| missing("level"))?;
                let level_one = params.level_one.ok_or_else(|| missing("level_one"))?;
                let loss = params.loss.ok_or_else(|| missing("loss"))?;
                let solver = params.solver.unwrap_or_default();
                Ok(Arc::new(LevelK::new(k, level_one, loss, solver)))
            }
            "label-target" => {
                let g = params.label_target.ok_or_else(|| missing("label_target"))?;
                Ok(Arc::new(LabelTarget::new(g)))
            }
            "parametric-shift" => {
                let eta = params.eta.ok_or_else(|| missing("eta"))?;
                let dirs = params.directions.ok_or_else(|| missing("directions"))?;
                Ok(Arc::new(ParametricShift::new(eta, dirs)?))
            }
            "simplex-reassign" => {
                let anchors = params.anchors.ok_or_else(|| missing("anchors"))?;
                let w = params
                    .simplex_weights
                    .ok_or_else(|| missing("simplex_weights"))?;
                Ok(Arc::new(SimplexReassign::new(anchors, w)?))
            }
            other => Err(Error::UnknownName {
                kind: "strategy",
                name: other.to_string(),
            }),
        }
    }
}
