use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} is outside the open interval (0, 1)")]
    Domain { value: f64 },

    #[error("statement has {n} claims, exact enumeration supports at most {max}")]
    TooManyClaims { n: usize, max: usize },

    #[error("unknown source index {index} (model has {len} sources)")]
    UnknownSource { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("statement {statement} claim {claim} has no source id; the per-source model needs identified sources")]
    AnonymousClaim { statement: String, claim: usize },

    #[error("statement {statement} claim {claim} is missing features (expected {expected}, got {actual})")]
    MissingFeatures {
        statement: String,
        claim: usize,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite parameter at epoch {epoch}, statement {statement}: {detail}")]
    NonFinite {
        epoch: usize,
        statement: String,
        detail: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{count} malformed rows in {path}; first: row {row}: {message}")]
    Malformed {
        path: PathBuf,
        count: usize,
        row: usize,
        message: String,
    },

    #[error("conflicting claims from source {source_id} on {entity}/{attribute}: {first:?} vs {second:?}")]
    ConflictingClaims {
        source_id: String,
        entity: String,
        attribute: String,
        first: String,
        second: String,
    },

    #[error("feature recipe: {0}")]
    Recipe(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("{0}")]
    Evaluation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error comes from training diverging rather than from input data.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
