//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected 44100 Hz sample rate, got {0}")]
    SampleRate(u32),

    #[error("expected {expected} channel(s), got {got}")]
    ChannelCount { expected: usize, got: usize },

    #[error("input too short: need at least {needed} samples, got {got}")]
    InputTooShort { needed: usize, got: usize },

    #[error("empty buffer")]
    EmptyBuffer,

    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-finite {what} at step {step}")]
    NonFiniteAtStep { what: &'static str, step: usize },

    #[error("embedding is not unit norm (norm {norm}, tolerance {tol})")]
    NotUnitNorm { norm: f64, tol: f64 },

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    EmbeddingDim { expected: usize, got: usize },

    #[error("encoder mismatch: expected {expected}, got {got}")]
    EncoderMismatch { expected: String, got: String },

    #[error("encoder {0} has no signal-path gradient and cannot drive optimisation")]
    NotOptimisable(String),

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(&'static str),

    #[error("empty {0}")]
    EmptyCollection(&'static str),

    #[error("covariance is not positive definite; increase shrinkage")]
    SingularCovariance,

    #[error("unsupported parameter layout {got:?}, expected {expected:?}")]
    LayoutVersion { expected: String, got: String },

    #[error("buffer length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },

    #[error("need at least 2 active segments, found {0}")]
    InsufficientSegments(usize),

    #[error("all chunks are silent; nothing to fit")]
    AllChunksSilent,

    #[error("steps must be at least 1")]
    ZeroSteps,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed wav: {0}")]
    Wav(String),

    #[error("unsupported wav encoding: {0}")]
    WavEncoding(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
