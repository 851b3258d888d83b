//! Library side of the `anynoise` command: config loading and the work behind
//! each subcommand, shared with the integration tests.

pub mod commands;
pub mod config;

pub use config::{ExperimentConfig, UsageError};
