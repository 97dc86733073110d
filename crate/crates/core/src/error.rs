use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the active-learning engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no points")]
    NoPoints,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate boundary: weight vector has zero norm")]
    DegenerateBoundary,
    #[error("degenerate query: query sample lies on the boundary estimate")]
    DegenerateQuery,
    #[error("query outside domain: line misses the bounding hypersphere")]
    QueryOutsideDomain,
    #[error("invalid resolution {0}: must be positive and finite")]
    InvalidResolution(f64),
    #[error("no labeled data")]
    NoLabeledData,
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("pool exhausted")]
    PoolExhausted,
    #[error("pool has {pool} members, fewer than the batch size {batch}")]
    PoolTooSmall { pool: usize, batch: usize },
    #[error("learning curve needs at least two points, got {0}")]
    CurveTooShort(usize),
    #[error("no positive labels")]
    NoPositives,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no query is pending")]
    NoPendingQuery,
    #[error("stale line id {got}: pending line is {expected}")]
    StaleLine { expected: u64, got: u64 },
    #[error("query budget of {0} reached")]
    BudgetReached(usize),
    #[error("replay diverged at record {record}: {message}")]
    ReplayDiverged { record: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
