use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("no external embedding for {0:?}")]
    MissingEmbedding(String),

    #[error("unknown document id {0:?} (not present in gold)")]
    UnknownDocument(String),

    #[error(
        "non-finite loss at step {step}: classification={classification}, sdr={sdr}, npr={npr}"
    )]
    NonFiniteLoss {
        step: usize,
        classification: f64,
        sdr: f64,
        npr: f64,
    },

    #[error("negative pool is empty after filtering with t_d={t_d}; lower t_d")]
    EmptyNegativePool { t_d: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
