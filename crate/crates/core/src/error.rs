use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph is disconnected: agents {component:?} are unreachable from agent 0")]
    Disconnected { component: Vec<usize> },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical failure in {context} at round {round}: non-finite value")]
    NumericalFailure { context: String, round: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("objective is not strongly convex (mu = {mu})")]
    NotStronglyConvex { mu: f64 },

    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{algorithm} failed at iteration {iteration}: {source}")]
    Run {
        algorithm: String,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
