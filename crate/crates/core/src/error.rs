use std::io;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller supplied something the operation cannot accept.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An evaluation subset filtered down to nothing.
    #[error("empty subset: {0}")]
    EmptySubset(String),

    /// A file parsed but its content violates the format.
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Short stable tag used as a machine-parsable prefix by front ends.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::DimensionMismatch { .. } => "dimension",
            Error::EmptySubset(_) => "empty-subset",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
