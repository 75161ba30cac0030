//! Gradient-based MCMC over assembled log-density term lists.

pub mod diagnostics;
pub mod draws;
pub mod expr;
pub mod hmc;
pub mod hpdi;
pub mod model;

use thiserror::Error;

pub use diagnostics::{mcse_mean, rhat_ess, rhat_ess_traces, Convergence, ConvergenceReport};
pub use draws::{ChainStats, DrawMatrix};
pub use expr::{logistic, logit, Atom, LinearPredictor, Location, Mixing};
pub use hmc::{random_inits, sample, SamplerConfig};
pub use hpdi::hpdi;
pub use model::{BernoulliObs, DensityTerm, GaussianObs, Model, Replicates, Spread};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("log density or gradient is not finite")]
    NonFiniteDensity,
    #[error("log density is not finite at the initial point")]
    NonFiniteAtInit,
    #[error("every post-warmup transition of chain {chain} diverged")]
    AllDivergent { chain: usize },
    #[error("need at least 2 chains with 4 draws each")]
    TooFewDraws,
    #[error("need at least 20 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid term: {0}")]
    InvalidTerm(String),
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
}
