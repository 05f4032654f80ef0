use thiserror::Error;

use crate::certificate::Certificate;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: row {row} has {len} entries, expected {expected}")]
    NonSquare {
        row: usize,
        len: usize,
        expected: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation requires a nonempty set")]
    EmptySet,

    #[error("point index {index} out of range for a space of {len} points")]
    PointOutOfRange { index: usize, len: usize },

    #[error("not a valid metric: {0}")]
    InvalidMetric(String),

    #[error("linear program: {0}")]
    Lp(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("point {0} is not covered by any set of the family")]
    Uncovered(usize),

    #[error("admission radius violated: measured distance {measured} exceeds radius {radius}")]
    Admission { measured: f64, radius: f64 },

    #[error("certificate `{}` failed: measured {} against bound {}", .0.name, .0.measured, .0.bound)]
    CertificateFailed(Box<Certificate>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
