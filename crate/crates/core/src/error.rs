use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up (operator vs. vector, raster vs. raster).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numeric parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The caller violated a usage contract (empty input, missing trace, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed configuration file or value.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed file contents.
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// A NaN or infinity showed up where finite values are required.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// A metric is undefined for the given inputs.
    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end:
    /// 1 numerical failure, 2 usage/config error, 3 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) | Error::Undefined(_) => 1,
            Error::Dimension(_) | Error::Parameter(_) | Error::Usage(_) | Error::Config(_) => 2,
            Error::Parse { .. } | Error::Io { .. } | Error::Image(_) => 3,
        }
    }
}
