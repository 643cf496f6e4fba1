use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while decoding IDX files.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("IDX data truncated: header promises {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("label {label} at index {index} is outside [0, 9]")]
    LabelOutOfRange { index: usize, label: u8 },
}

/// Failures while loading a checkpoint file.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("checkpoint format version {found:?} is not supported (expected {expected:?})")]
    VersionMismatch { found: String, expected: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("checkpoint tensors do not match the network spec: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("2x2 pooling needs even spatial dimensions, got {height}x{width}")]
    OddDimension { height: usize, width: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("channel {channel} out of range for a tensor with {channels} channels")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("invalid perturbation plan: {0}")]
    InvalidPlan(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("reports are not comparable: {0}")]
    ExperimentMismatch(String),
    #[error("{path}: {source}")]
    Idx {
        path: PathBuf,
        #[source]
        source: IdxError,
    },
    #[error(transparent)]
    IdxData(#[from] IdxError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
