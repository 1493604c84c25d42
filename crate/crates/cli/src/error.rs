use std::io;
use std::path::Path;

use thiserror::Error;

/// Failures surfaced to the command line, split by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, missing input files.
    #[error("{0}")]
    Config(String),
    /// Inputs that exist but cannot be used.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
