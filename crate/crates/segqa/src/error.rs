use std::path::PathBuf;

/// Crate-wide error type. Variants map one-to-one onto the failure
/// categories surfaced by the CLI exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("empty foreground: {0}")]
    EmptyForeground(String),

    #[error("bad magic in {path}: expected {expected:?}")]
    MagicMismatch { path: PathBuf, expected: String },

    #[error("truncated payload in {path}: expected {expected} bytes, got {got}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        got: usize,
    },

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at epoch {epoch}: {value}")]
    NonFiniteLoss { epoch: usize, value: f64 },

    #[error("covariance not positive definite for organ {0}")]
    NotPositiveDefinite(String),

    #[error("unknown organ: {0}")]
    UnknownOrgan(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
