use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("inner feasibility solver failed: {0}")]
    SolverFailure(String),

    #[error("bisection bracket failure: lower bound t_lo = {0} is infeasible")]
    Bracket(f64),

    #[error("brute-force oracle limited to M*K <= 6, got M = {m}, K = {k}")]
    OracleTooLarge { m: usize, k: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (state dumped to {dump:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        dump: Option<PathBuf>,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
