use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid quantization scale {0}")]
    InvalidScale(f32),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("inner dimension {k} exceeds the INT32 accumulation bound {bound}")]
    OverflowRisk { k: usize, bound: usize },

    #[error("layer index {index} out of range for {layers} layers")]
    IndexOutOfRange { index: usize, layers: usize },

    #[error("forward trace is stale: model changed since it was recorded")]
    StaleForward,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: truncated file ({detail})")]
    TruncatedFile { path: PathBuf, detail: String },

    #[error("label {0} out of range 0..10")]
    LabelOutOfRange(usize),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
