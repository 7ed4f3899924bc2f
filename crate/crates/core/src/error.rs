use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = RcaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RcaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },

    #[error("requested rank {requested} but only {available} generalized eigenvalues exceed one")]
    RankUnavailable { requested: usize, available: usize },

    #[error(
        "{solver} did not converge after {iterations} iterations (last change {last_change:e})"
    )]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl RcaError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        RcaError::InvalidInput(msg.into())
    }

    pub fn not_pd(context: impl Into<String>) -> Self {
        RcaError::NotPositiveDefinite {
            context: context.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RcaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        RcaError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
