//! Experiment runner: JSON configs in, CSV tables and a JSON summary out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builtin;
pub mod config;
pub mod error;
pub mod runner;

pub use builtin::{builtin, BUILTIN_NAMES};
pub use config::{Endpoints, ExperimentConfig, Mode, Outputs};
pub use error::CliError;
pub use runner::{run, RunOptions, RunReport, RunSummary, Table};

/// Resolves a config argument: an existing file path, else a builtin name.
pub fn resolve_config(arg: &str) -> Result<ExperimentConfig, CliError> {
    let path = std::path::Path::new(arg);
    if path.is_file() {
        return ExperimentConfig::load(path);
    }
    builtin(arg).ok_or_else(|| {
        CliError::Config(format!("{arg} is neither a config file nor a builtin ({})", BUILTIN_NAMES.join(", ")))
    })
}
