use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the command-line front end to pick an exit
/// code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("unsupported topology kind `{0}`")]
    UnsupportedTopology(String),

    #[error("expected a {expected} sequence, got {found}")]
    WrongTopology { expected: String, found: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate geometry in frame {frame}: zero-length vector between {from} and {to}")]
    DegenerateGeometry { frame: usize, from: String, to: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("bad container: {0}")]
    Format(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_)
            | Error::UnsupportedTopology(_)
            | Error::Incompatible(_)
            | Error::InvalidTopology(_) => ErrorKind::Config,
            Error::NonFinite(_) => ErrorKind::Numerical,
            Error::Io(_) => ErrorKind::Io,
            Error::WrongTopology { .. }
            | Error::Shape(_)
            | Error::DegenerateGeometry { .. }
            | Error::Empty(_)
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::Json(_) => ErrorKind::Data,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
