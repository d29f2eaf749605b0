use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::ScaleTriple;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{path}: format error at {location}: {message}")]
    Format {
        path: PathBuf,
        /// "byte N" or "line N"
        location: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("detector failed: {0}")]
    Detector(String),

    #[error("sweep failed at scale ({}, {}, {}), sequence {sequence}, frame {frame}: {source}", scale.wx, scale.wy, scale.wz)]
    Sweep {
        scale: ScaleTriple,
        sequence: String,
        frame: String,
        #[source]
        source: Box<Error>,
    },

    #[error("annotation failed at sequence {sequence}, frame {frame}: {source}")]
    Annotation {
        sequence: String,
        frame: String,
        #[source]
        source: Box<Error>,
    },

    #[error("adaptation failed: {0}")]
    Adaptation(String),

    #[error("evaluation failed: {0}")]
    Eval(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
