//! Experiment configuration: JSON with a published schema
//! (docs/config.schema.json), unknown keys rejected, defaults matching the
//! reference simulation protocol.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const EXPERIMENTS: &[&str] = &[
    "levelk-dynamics",
    "alignment-sweep",
    "size-sweep",
    "fixed-strategy-sweep",
    "triangle",
    "validate",
];

/// Default strategic feature set for best-response experiments.
pub fn default_strategic_features() -> Vec<String> {
    vec![
        "revolving_balance".into(),
        "open_credit_lines".into(),
        "real_estate_loans".into(),
    ]
}

/// Default misreported features for collective-strategy experiments.
pub fn default_shift_features() -> Vec<String> {
    vec!["age".into(), "n_dependents".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional; when present it must match the CLI-selected experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub utility: UtilityConfig,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub triangle: TriangleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            data: DataConfig::default(),
            loss: LossConfig::default(),
            utility: UtilityConfig::default(),
            population: PopulationConfig::default(),
            sweep: SweepConfig::default(),
            solver: SolverSection::default(),
            optimizer: OptimizerSection::default(),
            triangle: TriangleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// "synthetic" or "csv".
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_columns: Option<Vec<String>>,
}

fn default_source() -> String {
    "synthetic".into()
}
fn default_n() -> usize {
    1000
}
fn default_d() -> usize {
    10
}
fn default_seed() -> u64 {
    7
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: default_source(),
            n: default_n(),
            d: default_d(),
            seed: default_seed(),
            path: None,
            label_column: None,
            feature_columns: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// "regularized-logistic", "squared-scalar" or "squared-prediction".
    #[serde(default = "default_loss_kind")]
    pub kind: String,
    /// Ridge strength for the kinds that carry one.
    #[serde(default = "default_loss_lambda")]
    pub lambda: f64,
    /// Declared smoothness-in-z constant, reported alongside rates.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_loss_kind() -> String {
    "regularized-logistic".into()
}
fn default_loss_lambda() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    1.0
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: default_loss_kind(),
            lambda: default_loss_lambda(),
            beta: default_beta(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityConfig {
    /// "alignment-regularized", "target-model", "target-prediction",
    /// "linear-score-quadratic-cost" or "triangle". Experiments that imply a
    /// utility ignore this section's kind but honor its parameters.
    #[serde(default = "default_utility_kind")]
    pub kind: String,
    /// Agent modification-cost scale for best-response settings.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Alignment knob of the regularized utility.
    #[serde(default)]
    pub lambda: f64,
    /// Sign of the loss term in the regularized utility: +1 (verbatim) or -1.
    #[serde(default = "default_sign")]
    pub sign: f64,
    /// Explicit target model; when absent, sweeps derive it as documented.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_target: Option<Vec<f64>>,
}

fn default_utility_kind() -> String {
    "alignment-regularized".into()
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_sign() -> f64 {
    1.0
}

impl Default for UtilityConfig {
    fn default() -> Self {
        UtilityConfig {
            kind: default_utility_kind(),
            epsilon: default_epsilon(),
            lambda: 0.0,
            sign: default_sign(),
            theta_target: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    /// Named level-k mixtures for the dynamics experiment.
    #[serde(default = "default_mixtures")]
    pub mixtures: Vec<MixtureSpec>,
    /// Features the agents can modify via best response.
    #[serde(default = "default_strategic_features")]
    pub strategic_features: Vec<String>,
    /// Features the collective misreports in sweep experiments.
    #[serde(default = "default_shift_features")]
    pub shift_features: Vec<String>,
}

fn default_mixtures() -> Vec<MixtureSpec> {
    vec![
        MixtureSpec {
            id: "level1".into(),
            levelk: vec![(1, 1.0)],
        },
        MixtureSpec {
            id: "mixed".into(),
            levelk: vec![(1, 0.5), (2, 0.5)],
        },
        MixtureSpec {
            id: "level2".into(),
            levelk: vec![(2, 1.0)],
        },
    ]
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            mixtures: default_mixtures(),
            strategic_features: default_strategic_features(),
            shift_features: default_shift_features(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub id: String,
    /// `(k, alpha_k)` pairs.
    pub levelk: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Collective sizes for size/fixed-strategy sweeps.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Alignment-knob grid for the alignment sweep.
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    /// Sizes at which size-aware strategies are pre-optimized.
    #[serde(default = "default_strategy_alphas")]
    pub strategy_alphas: Vec<f64>,
    /// Box bounds on the scalar shift strength.
    #[serde(default = "default_eta_bounds")]
    pub eta_bounds: (f64, f64),
    /// Retraining rounds recorded by the dynamics experiment.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Iterate-gap tolerance for the dynamics experiment.
    #[serde(default = "default_gap_tol")]
    pub gap_tol: f64,
}

fn default_alphas() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}
fn default_lambdas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 * 0.1).collect()
}
fn default_strategy_alphas() -> Vec<f64> {
    vec![0.3, 0.5, 0.8]
}
fn default_eta_bounds() -> (f64, f64) {
    (-3.0, 3.0)
}
fn default_rounds() -> usize {
    15
}
fn default_gap_tol() -> f64 {
    1e-9
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: default_alphas(),
            lambdas: default_lambdas(),
            strategy_alphas: default_strategy_alphas(),
            eta_bounds: default_eta_bounds(),
            rounds: default_rounds(),
            gap_tol: default_gap_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// "newton" or "gradient-descent".
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
}

fn default_grad_tol() -> f64 {
    1e-10
}
fn default_max_iters() -> usize {
    10_000
}
fn default_method() -> String {
    "newton".into()
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            grad_tol: default_grad_tol(),
            max_iters: default_max_iters(),
            method: default_method(),
            step_size: None,
        }
    }
}

impl SolverSection {
    pub fn to_solver(&self) -> Result<lookahead::learner::SolverConfig> {
        let method = match self.method.as_str() {
            "newton" => lookahead::learner::SolveMethod::Newton,
            "gradient-descent" => lookahead::learner::SolveMethod::GradientDescent,
            other => bail!("unknown solver method '{other}'"),
        };
        Ok(lookahead::learner::SolverConfig {
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            method,
            step_size: self.step_size,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_opt_step")]
    pub step: f64,
    #[serde(default = "default_opt_iters")]
    pub max_iters: usize,
    #[serde(default = "default_opt_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_line_search")]
    pub line_search: bool,
}

fn default_opt_step() -> f64 {
    0.01
}
fn default_opt_iters() -> usize {
    250
}
fn default_opt_tol() -> f64 {
    1e-8
}
fn default_line_search() -> bool {
    true
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            step: default_opt_step(),
            max_iters: default_opt_iters(),
            grad_tol: default_opt_tol(),
            line_search: default_line_search(),
        }
    }
}

impl OptimizerSection {
    pub fn to_optimizer(&self) -> lookahead::collective::OptimizerConfig {
        lookahead::collective::OptimizerConfig {
            step: self.step,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            line_search: self.line_search,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriangleConfig {
    #[serde(default = "default_radius")]
    pub r: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
}

fn default_radius() -> f64 {
    1.0
}
fn default_grid_step() -> f64 {
    0.01
}

impl Default for TriangleConfig {
    fn default() -> Self {
        TriangleConfig {
            r: default_radius(),
            grid_step: default_grid_step(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = &self.experiment {
            if !EXPERIMENTS.contains(&e.as_str()) {
                bail!("unknown experiment '{e}'; expected one of {EXPERIMENTS:?}");
            }
        }
        match self.data.source.as_str() {
            "synthetic" => {
                if self.data.n < 10 {
                    bail!("synthetic data requires n >= 10");
                }
                if self.data.d < 3 {
                    bail!("synthetic data requires d >= 3");
                }
            }
            "csv" => {
                if self.data.path.is_none() {
                    bail!("csv data source requires 'path'");
                }
                if self.data.label_column.is_none() {
                    bail!("csv data source requires 'label_column'");
                }
            }
            other => bail!("unknown data source '{other}'"),
        }
        if self.utility.epsilon <= 0.0 {
            bail!("utility.epsilon must be > 0");
        }
        if self.utility.sign != 1.0 && self.utility.sign != -1.0 {
            bail!("utility.sign must be +1 or -1");
        }
        if self.sweep.eta_bounds.0 > self.sweep.eta_bounds.1 {
            bail!("sweep.eta_bounds must satisfy lo <= hi");
        }
        for m in &self.population.mixtures {
            let total: f64 = m.levelk.iter().map(|(_, a)| a).sum();
            if (total - 1.0).abs() > 1e-12 {
                bail!("mixture '{}' level-k weights sum to {total}, expected 1", m.id);
            }
        }
        if self.triangle.r < 0.0 {
            bail!("triangle.r must be >= 0");
        }
        if !(0.0 < self.triangle.grid_step && self.triangle.grid_step <= 0.5) {
            bail!("triangle.grid_step must lie in (0, 0.5]");
        }
        Ok(())
    }
}
