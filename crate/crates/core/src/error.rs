use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FcnrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FcnrError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("image dimensions {height}x{width} are not multiples of {multiple}; pad first")]
    PaddingRequired {
        height: usize,
        width: usize,
        multiple: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt bitstream: {0}")]
    Corrupt(String),

    #[error("bitstream was produced by model {expected:016x}, loaded weights are {actual:016x}")]
    WrongModel { expected: u64, actual: u64 },

    #[error("malformed coder job at byte offset {offset}: {reason}")]
    CoderJob { offset: usize, reason: String },

    #[error("non-finite {term} loss at step {step}")]
    Diverged { term: &'static str, step: u64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("external coder: {0}")]
    ExternalCoder(String),

    #[error("chart: {0}")]
    Chart(String),
}

impl FcnrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FcnrError::Io {
            path: path.into(),
            source,
        }
    }
}
