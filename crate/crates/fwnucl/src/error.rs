use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("group exceeds tensor bounds")]
    GroupOutOfBounds,

    #[error("overlapping groups in partition: groups {0} and {1} share a pixel")]
    OverlappingGroups(usize, usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero matrix has no dominant pair")]
    ZeroMatrix,

    #[error("projection not available for this ball")]
    ProjectionUnsupported,

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("truncated file {path}: expected {expected} bytes of payload, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
