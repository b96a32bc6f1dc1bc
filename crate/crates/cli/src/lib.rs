//! Experiment harness for the curvzo optimizer.

pub mod commands;
pub mod config;
pub mod metrics;
pub mod verify;

use std::path::{Path, PathBuf};

use curvzo::CurvzoError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numerical failure at step {step}: {detail}")]
    Numerical { step: u64, detail: String },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Core(CurvzoError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 0 success, 1 config or I/O, 2 numerical failure, 3 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical { .. } => 2,
            CliError::Verification(_) => 3,
            _ => 1,
        }
    }
}

impl From<CurvzoError> for CliError {
    fn from(e: CurvzoError) -> Self {
        match e {
            CurvzoError::NumericalFailure { step, detail } => CliError::Numerical { step, detail },
            CurvzoError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Core(other),
        }
    }
}
