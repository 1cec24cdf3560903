use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate docno `{0}`")]
    DuplicateDocno(String),

    #[error("collection is empty: {0}")]
    EmptyCollection(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("degenerate calibration for {kind}: min == max == {value}")]
    DegenerateCalibration { kind: String, value: f64 },

    #[error("qid sets differ: {0}")]
    QidMismatch(String),

    #[error("index format: {0}")]
    Format(String),

    #[error("unsupported index version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at {stage}: {detail}")]
    NonFinite { stage: &'static str, detail: String },

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

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
