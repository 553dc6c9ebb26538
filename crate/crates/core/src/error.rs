//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid record {index}: {violation}")]
    Validation { index: usize, violation: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("tag conflict at cell ({i}, {j}): {existing} vs {incoming}")]
    Conflict {
        i: usize,
        j: usize,
        existing: &'static str,
        incoming: &'static str,
    },

    #[error("grid too large for exhaustive decoding: n = {0} (limit 10)")]
    Size(usize),

    #[error("prediction/gold length mismatch: {pred} vs {gold}")]
    LengthMismatch { pred: usize, gold: usize },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
