use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error at row {row}, column {column}: {message}")]
    CsvCell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("timestamps not strictly increasing at row {row}: {prev} >= {next}")]
    NonMonotonic {
        row: usize,
        prev: String,
        next: String,
    },

    #[error("invalid descriptor: {0}")]
    Descriptor(String),

    #[error("segment `{segment}` has {rows} rows, need at least {needed}")]
    SegmentTooShort {
        segment: &'static str,
        rows: usize,
        needed: usize,
    },

    #[error("invalid window: {0}")]
    Window(String),

    #[error("invalid metadata: {0}")]
    Metadata(String),

    #[error("embedding backend unreachable (retryable): {0}")]
    BackendUnavailable(String),

    #[error("embedding backend error: {0}")]
    Backend(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite values in layer `{layer}`")]
    NonFinite { layer: String },

    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("incompatible dataset `{dataset}`: {reason}")]
    Incompatible { dataset: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("division by zero: {0}")]
    ZeroDivision(&'static str),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether retrying the same call may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::BackendUnavailable(_))
    }
}
