use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("trace error at row {row}: {field}: {message}")]
    TraceRow {
        row: usize,
        field: &'static str,
        message: String,
    },

    #[error("trace header mismatch: expected `{expected}`, found `{found}`")]
    TraceHeader { expected: String, found: String },

    #[error("file `{file_id}` changes {field} within the trace (row {row})")]
    InconsistentFile {
        file_id: String,
        field: &'static str,
        row: usize,
    },

    #[error("invalid trace spec: {0}")]
    TraceSpec(String),

    #[error("tick {tick} does not follow previous tick {previous}")]
    NonMonotonicTick { tick: u64, previous: u64 },

    #[error("day {day} precedes current day {current}")]
    NonMonotonicDay { day: u32, current: u32 },

    #[error("policy violated the cache contract: {0}")]
    PolicyContract(String),

    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss during training: {0}")]
    NonFiniteLoss(String),

    #[error("unknown policy `{id}`; valid ids: {valid}")]
    UnknownPolicy { id: String, valid: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
