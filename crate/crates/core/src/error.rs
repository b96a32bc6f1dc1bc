use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the optimizer library.
#[derive(Debug, Error)]
pub enum CurvzoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operation `{op}` is not supported for problem kind `{kind}`")]
    UnsupportedKind { op: &'static str, kind: &'static str },

    #[error("infeasible budget {budget} for n = {n} with floor {floor}")]
    InfeasibleBudget { budget: f64, n: usize, floor: f64 },

    #[error("numerical failure at step {step}: {detail}")]
    NumericalFailure { step: u64, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CurvzoError>;

impl CurvzoError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CurvzoError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CurvzoError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a step index to a numerical failure raised without one.
    pub fn at_step(self, step: u64) -> Self {
        match self {
            CurvzoError::NumericalFailure { detail, .. } => {
                CurvzoError::NumericalFailure { step, detail }
            }
            other => other,
        }
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(CurvzoError::DimensionMismatch { expected, found })
    }
}
