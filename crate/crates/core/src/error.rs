use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::features::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while reading a `.ftbf` feature file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic: expected \"FTBF\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported feature file version {0}")]
    UnsupportedVersion(u32),
    #[error("header truncated: {0} bytes, need 16")]
    TruncatedHeader(usize),
    #[error("truncated payload: header declares {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("trailing bytes: header declares {expected} payload bytes, found {actual}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("empty shape {rows}x{cols}")]
    EmptyShape { rows: u32, cols: u32 },
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: DecodeError,
    },
    #[error("invalid feature sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("manifest {path} line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("validation failed:\n{0}")]
    Validation(ValidationReport),
    #[error("evaluation failed for video {video_id}: {message}")]
    Evaluation { video_id: String, message: String },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
