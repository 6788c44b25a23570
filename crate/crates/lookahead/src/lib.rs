//! Look-ahead reasoning on learning platforms: a risk-minimizing learner
//! repeatedly retrained against strategic populations, with equilibrium
//! solvers, convergence-rate measurement, collective-strategy optimization
//! through the equilibrium map, and alignment diagnostics.
//!
//! The crate is organized around small trait families selected by name:
//! losses ([`loss`]), utilities ([`utility`]) and agent strategies
//! ([`strategies`]). Everything operates on finite weighted empirical
//! distributions ([`population`]); all expectations are deterministic
//! weighted sums.

pub mod collective;
pub mod dynamics;
pub mod error;
pub mod learner;
pub mod loss;
pub mod objective;
pub mod oracle;
pub mod population;
pub mod strategies;
pub mod utility;

pub use error::{Error, Result};
pub use population::{EmpiricalDistribution, Model, PopulationMix, RemainderBehavior, Sample};
