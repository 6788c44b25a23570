use thiserror::Error;

/// Errors surfaced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("matrix is singular or too ill-conditioned (cond estimate {cond:.3e} > {limit:.3e})")]
    IllConditioned { cond: f64, limit: f64 },

    #[error("solver did not converge after {iters} iterations (gradient norm {grad_norm:.3e} > tol {tol:.3e})")]
    NonConvergence {
        iters: usize,
        grad_norm: f64,
        tol: f64,
    },

    #[error("level-k chain failed at link {index}: {source}")]
    ChainFit {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("retraining failed at round {round}: {source}")]
    DynamicsRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dynamics did not converge within {rounds} rounds (last gap {last_gap:.3e})")]
    DynamicsDiverged { rounds: usize, last_gap: f64 },

    #[error("rate estimation needs at least {needed} usable gaps, found {found}")]
    InsufficientGaps { needed: usize, found: usize },

    #[error("strategy optimization failed at eta = {eta:?}: {source}")]
    OptimizerStep {
        eta: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("equilibrium validation failed: {0}")]
    InvalidEquilibrium(String),

    #[error("unknown {kind} name: {name}")]
    UnknownName { kind: &'static str, name: String },
}

pub type Result<T> = std::result::Result<T, Error>;
