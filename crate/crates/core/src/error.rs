use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("expected {expected} spatial offsets/phases, got {got}")]
    SpatialRankMismatch { expected: usize, got: usize },

    #[error("spatial extent {extent} is not divisible by {divisor}")]
    NotDivisible { extent: usize, divisor: usize },

    #[error("invalid stride {stride} or phase {phase:?}")]
    InvalidPhase { stride: usize, phase: Vec<usize> },

    #[error("norm order must be positive and finite, got {0}")]
    InvalidNormOrder(f64),

    #[error("unsupported blur filter size {0} (expected 2, 3 or 5)")]
    UnsupportedFilter(usize),

    #[error("unknown sampling variant `{0}`")]
    UnknownVariant(String),

    #[error("kernel expects {expected} input channels, tensor has {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("adaptive upsampling requires a polyphase index")]
    MissingIndex,

    #[error("non-adaptive upsampling does not take a polyphase index")]
    UnexpectedIndex,

    #[error("operation requires an adaptive (APS) sampling variant")]
    NotAdaptive,

    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),

    #[error("reference tensor has zero energy")]
    ZeroReference,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
