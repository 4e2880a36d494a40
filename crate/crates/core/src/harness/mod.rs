//! Files, configuration and experiment runners.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod pgm;
pub mod tensorfile;

pub use commands::{evaluate, evaluate_cases, initializer_study, reconstruct, simulate, study_cases, train, CaseResult};
pub use config::{ExperimentConfig, Method, Scenario};
pub use dataset::{build_cases, Case, Dataset};
