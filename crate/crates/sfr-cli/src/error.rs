use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the experiment driver.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("spec file {path}: {message}")]
    Spec { path: PathBuf, message: String },
    #[error("{0}")]
    Core(#[from] sfr_core::error::SfrError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("report: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }
}
