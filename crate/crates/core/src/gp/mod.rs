//! Gaussian-process regression of the six-dimensional disturbance
//! `(f_v, f_ω)` with a squared-exponential kernel, a switching/forgetting
//! dataset, marginal-likelihood hyperparameter fitting and the confidence
//! machinery (`β_n`, `γ_j`, `ρ̄_n`) behind the probabilistic error bound.
//!
//! Inputs are arbitrary-dimension [`nalgebra::DVector`]s so the regression core
//! can be exercised on small problems; vehicle states use the 18-dimensional
//! [`encode_state`] embedding.

mod bounds;
mod dataset;
mod fit;
mod kernel;
mod model;

pub use bounds::{beta, info_gain, info_gain_greedy, rho_bar, BoundBundle, InfoGain, EXHAUSTIVE_LIMIT};
pub use dataset::{Dataset, TrainingPoint, UpdateOutcome, UpdatePolicy, CSV_HEADER};
pub use fit::{fit_hyperparameters, log_marginal_likelihood_with_gradient, FitOptions, FitResult, FitStatus};
pub use kernel::{
    decode_state, encode_state, kernel_se, EncodingScales, Hyperparams, OutputKernels, ENCODING_DIM,
};
pub use model::{build_model, log_marginal_likelihood, GpModel, MeanFunction, Prediction, JITTER_LADDER};

use thiserror::Error;

/// Number of learned output channels: `(f_v, f_ω)`.
pub const OUTPUTS: usize = 6;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("Gram matrix is not positive definite even with jitter {0:e}")]
    IllConditioned(f64),
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("need at least {needed} points, have {have}")]
    TooFewPoints { needed: usize, have: usize },
    #[error("dataset CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for GpError {
    fn from(e: csv::Error) -> Self {
        GpError::Csv(e.to_string())
    }
}
