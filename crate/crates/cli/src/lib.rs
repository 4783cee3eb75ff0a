//! Configuration, commands and result storage behind the `qexp` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod store;

pub use config::ExperimentConfig;
pub use error::CliError;
