use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A precondition on an operation input was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A file could not be parsed as the expected format.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A quantity required to be non-degenerate (mask occupancy,
    /// variance, matrix rank) collapsed.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Optimization produced a non-finite loss or gradient.
    #[error("non-finite value during optimization: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
