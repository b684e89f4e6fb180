use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CALIBRATION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },

    #[error("invalid config {path}: {message}")]
    InvalidConfig { path: PathBuf, message: String },

    #[error("invalid SACFL_THREADS value '{0}': expected a positive integer")]
    Threads(String),

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error("thread pool: {0}")]
    Pool(String),

    #[error(transparent)]
    Core(#[from] sacfl_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ReadConfig { .. } | CliError::InvalidConfig { .. } | CliError::Threads(_) => EXIT_CONFIG,
            CliError::Core(sacfl_core::Error::Config(_)) => EXIT_CONFIG,
            CliError::Core(sacfl_core::Error::Calibration(_)) => EXIT_CALIBRATION,
            CliError::Core(sacfl_core::Error::Numerical(_)) => EXIT_NUMERICAL,
            _ => EXIT_FAILURE,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
