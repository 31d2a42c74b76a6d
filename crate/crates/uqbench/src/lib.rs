//! Benchmark harness for regression uncertainty quantification: experiment
//! configs, the end-to-end runner, and seeded hyperparameter search.

pub mod config;
pub mod runner;
pub mod search;

pub use config::{ConfigError, ExperimentConfig};
pub use runner::{run_experiment, HarnessError, RunOutcome};
pub use search::{random_search, SearchOutcome};
