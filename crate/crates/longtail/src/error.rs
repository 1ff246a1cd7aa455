//! Error type shared by all modules.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON syntax error with location inside the file.
    #[error(
        "{path}: parse error at line {line}, column {column} (byte offset {offset}): {message}"
    )]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        offset: usize,
        message: String,
    },

    /// A bad line inside a JSONL or CSV stream.
    #[error("{path}: line {line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Structurally valid JSON that violates the expected schema.
    #[error("{path}: at `{at}`: {message}")]
    Schema {
        path: PathBuf,
        at: String,
        message: String,
    },

    #[error("record {index} ({image_ref}): label {label} out of range for {num_classes} classes")]
    UnknownLabel {
        index: usize,
        image_ref: String,
        label: usize,
        num_classes: usize,
    },

    #[error("{0}")]
    InvalidInput(String),

    #[error("non-finite value in {what} at row {row}")]
    NonFinite { what: &'static str, row: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("class `{class}` has zero samples; weight undefined")]
    ZeroCount { class: String },

    #[error("class `{class}` has no samples in the evaluation set")]
    ZeroPrevalence { class: String },

    #[error("label spaces differ: {0}")]
    LabelMismatch(String),

    #[error("metric history is empty")]
    EmptyHistory,

    #[error("monitored metric is not finite")]
    NonFiniteMetric,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }
}
