use thiserror::Error;

/// Errors raised by the geometry, codec and pipeline kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-convex input polygon")]
    NonConvexInput,
    #[error("non-finite polar diameter: ratio {ratio} at index {index}")]
    NonFiniteDiameter { index: usize, ratio: f64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Error {
    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateGeometry(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Broad class of the error, used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_) => ErrorKind::Usage,
            Error::Parse { .. } => ErrorKind::Data,
            Error::DegenerateGeometry(_)
            | Error::NonConvexInput
            | Error::NonFiniteDiameter { .. } => ErrorKind::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
