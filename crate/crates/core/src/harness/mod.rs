//! Experiment orchestration, statistics and export.

pub mod experiment;
pub mod export;
pub mod stats;

pub use experiment::{run_experiment, ExperimentConfig, RunResult};
