use std::io;
use thiserror::Error;

/// Everything that can go wrong below the CLI: bad extents, non-finite
/// numbers, inconsistent configs, malformed files.
#[derive(Debug, Error)]
pub enum Error {
    /// Rank or extent disagreement between operands.
    #[error("shape: {0}")]
    Shape(String),

    /// Non-finite values or numerically degenerate inputs (e.g. normalizing
    /// a single-voxel field).
    #[error("numeric: {0}")]
    Numeric(String),

    /// Invalid or mutually inconsistent configuration values.
    #[error("config: {0}")]
    Config(String),

    /// Malformed data: corrupt containers, digest mismatches, labels out of
    /// range.
    #[error("data: {0}")]
    Data(String),

    #[error("io on {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
