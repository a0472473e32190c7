use std::io;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] sgdcn_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("run directory {run_dir} was created with a different configuration (hash {found}, current {expected}); use a fresh run directory")]
    ConfigMismatch { run_dir: String, expected: String, found: String },

    #[error("corrupt run manifest: {0}")]
    Manifest(String),
}

impl CliError {
    /// 2 for validation failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ConfigMismatch { .. } | CliError::Core(sgdcn_core::Error::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}
