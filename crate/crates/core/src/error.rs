use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("jet shape mismatch: {0}")]
    JetShape(String),

    #[error("backward called without a cached forward pass")]
    NoCachedForward,

    #[error("query outside domain: {0}")]
    OutOfDomain(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("degenerate SDF gradient (|grad s| = {0:e})")]
    DegenerateGradient(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
