use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// The subgradient is zero, so no step direction exists.
    #[error("zero subgradient (stationary point)")]
    Stationary,

    #[error("angle undefined: zero-norm argument")]
    UndefinedAngle,

    #[error("{0} step size needs the ground-truth system")]
    MissingOracle(&'static str),

    #[error("trajectory has {available} periods, {requested} requested")]
    HorizonExceeded { requested: usize, available: usize },

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
