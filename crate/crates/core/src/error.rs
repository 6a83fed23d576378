use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model architecture: {0}")]
    InvalidArch(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("parameter vectors belong to different architectures")]
    ArchMismatch,

    #[error("non-finite value in parameters")]
    NonFinite,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelRange { label: usize, num_classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: bad magic 0x{found:08x}, expected 0x{expected:08x}", .path.display())]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{}: truncated file ({detail})", .path.display())]
    Truncated { path: PathBuf, detail: String },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("too few samples: {samples} samples for {clients} clients")]
    TooFewSamples { samples: usize, clients: usize },

    #[error("missing accuracy for client {0}")]
    MissingAccuracy(usize),

    #[error("missing model for client {0}")]
    MissingModel(usize),

    #[error("degenerate trust: non-malicious trust sums to {0}")]
    DegenerateTrust(f64),

    #[error("aggregation starved: no client is eligible to contribute")]
    AggregationStarved,

    #[error("empty model list")]
    EmptyModels,

    #[error("too few participants: {0}")]
    TooFewParticipants(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors raised while reading or validating configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
