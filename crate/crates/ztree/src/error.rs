//! Error type shared across the crate.

/// Crate-wide error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("coordinate {value} at point {index}, dimension {dim} is not finite")]
    NonFinite { index: usize, dim: usize, value: f64 },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("coordinate count {len} is not a multiple of dimension {dim}")]
    RaggedCoordinates { len: usize, dim: usize },
    #[error("{what} length {got} does not match point count {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("point count {n} exceeds the supported maximum {max}")]
    TooManyPoints { n: usize, max: usize },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("k must be at least 1")]
    KZero,
    #[error("k = {k} exceeds source point count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("period {value} in dimension {dim} is not positive and finite")]
    BadPeriod { dim: usize, value: f64 },
    #[error("linking length {value} is not positive and finite")]
    BadLinkingLength { value: f64 },
    #[error("grid point count {n} is not a perfect power of dimension {dim}")]
    BadGridCount { n: usize, dim: usize },
    #[error("point file: {0}")]
    Format(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
