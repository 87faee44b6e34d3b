use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("environment stepped before reset")]
    NotReset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("integration fault: {0}")]
    IntegrationFault(String),

    #[error("convective adjustment did not converge after {0} sweeps")]
    AdjustmentFault(usize),

    #[error("degenerate least-squares fit: {0}")]
    DegenerateFit(String),

    #[error("replay buffer holds {size} transitions, {requested} requested")]
    BufferUnderfull { size: usize, requested: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("federation aborted: {0}")]
    Federation(String),

    #[error("malformed data in {path}: {reason}")]
    Data { path: PathBuf, reason: String },

    #[error("unknown or illegal experiment id `{id}`: {reason}")]
    ExperimentId { id: String, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }
}
