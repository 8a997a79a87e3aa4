//! Configuration-driven experiment runner: synthetic data generation,
//! pretraining in six modes, per-site fine-tuning and the comparison table.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
