use thiserror::Error;

use crate::signal::ConfigViolation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join_violations(.0))]
    Config(Vec<ConfigViolation>),

    #[error("invalid filter band: {0}")]
    FilterBand(String),

    #[error("non-finite sample at index {index}")]
    NonFiniteSample { index: usize },

    #[error("candidate {index} has length {len}, expected {expected}")]
    CandidateLength {
        index: usize,
        len: usize,
        expected: usize,
    },

    #[error("candidate contains a non-finite value at position {position}")]
    NonFiniteCandidate { position: usize },

    #[error("dimension mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    Dimension {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("input is not sorted by timestamp at index {index}")]
    Unsorted { index: usize },

    #[error("model has not been trained")]
    Untrained,

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_violations(v: &[ConfigViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
