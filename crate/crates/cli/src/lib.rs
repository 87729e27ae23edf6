//! Experiment runner around the `bessel-lab` simulation library: named
//! experiments, layered configuration and report writing.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, UsageError};
pub use experiments::{find_experiment, registry, run_experiment, ExperimentOutcome};
