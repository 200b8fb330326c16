//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    /// Undecodable bytes, bad magic, illegal mask values, truncated payloads.
    #[error("format: {0}")]
    Format(String),
    /// Text input that failed to parse, with a 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    /// Structurally valid input that violates a semantic constraint.
    #[error("validation: {0}")]
    Validation(String),
    /// Rect or index outside the raster it addresses.
    #[error("bounds: {0}")]
    Bounds(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Tensor shape mismatch.
    #[error("shape: {0}")]
    Shape(String),
    /// Unusable training data or diverged training.
    #[error("training: {0}")]
    Training(String),
}

impl From<image::ImageError> for Error {
    fn from(err: image::ImageError) -> Self {
        match err {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Format(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
