use thiserror::Error;

/// Errors raised by the toolkit. Class labels in messages are 1-based,
/// matching the external file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid label {label}: expected a class in 1..={classes}")]
    InvalidLabel { label: usize, classes: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format version {found:?} (this build reads major version {supported})")]
    Version { found: String, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    /// `index` is 0-based; the message reports it 1-based.
    pub(crate) fn label(index: usize, classes: usize) -> Self {
        Error::InvalidLabel {
            label: index + 1,
            classes,
        }
    }
}
