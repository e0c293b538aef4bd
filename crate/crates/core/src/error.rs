//! One error type for the whole crate.
//!
//! Contract violations (bad shapes, invalid configs, malformed files) are
//! reported as values, not panics, so the CLI can map them to exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/operation shape mismatch. The message names the operation and
    /// both offending shapes.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid run configuration (unknown key, out-of-range value, missing
    /// file). The message names the offending key.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or incompatible data file (dataset, vocabulary, records).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed, truncated, or version-incompatible checkpoint.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Degenerate geometry (self-intersecting polygon, empty centerline...).
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }
}
