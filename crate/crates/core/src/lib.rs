//! Regression uncertainty quantification: split and studentized-residual
//! conformal prediction, Monte Carlo Dropout, deep ensembles, mean-field
//! variational Bayesian networks, and exact Gaussian-process regression,
//! with a synthetic heteroscedastic benchmark and interval scoring.
//!
//! Everything stochastic takes an explicit [`rng::RngStream`], so a full
//! benchmark run is bit-reproducible from a config and a seed.

pub mod conformal;
pub mod datagen;
pub mod dataset;
pub mod gp;
mod linalg;
pub mod metrics;
pub mod neural;
pub mod neural_uq;
pub mod predict;
pub mod rng;

pub use dataset::{Dataset, DatasetError, Role};
pub use predict::{
    gaussian_interval, ConfidenceLevel, ConstantModel, GaussianPrediction, PointPredictor,
    PredictError, PredictionInterval, Predictor,
};
pub use rng::RngStream;

/// Crate version, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
