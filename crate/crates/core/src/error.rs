use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Extent mismatch between operands, naming the axis that disagrees.
    #[error("dimension error on axis {axis}: {message}")]
    Dimension { axis: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// The input has no meaningful answer (constant image, empty region...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The caller broke an API contract (stale tape, non-scalar loss...).
    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub(crate) fn dim(axis: usize, message: impl Into<String>) -> Self {
        Error::Dimension { axis, message: message.into() }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    pub(crate) fn degenerate(message: impl Into<String>) -> Self {
        Error::Degenerate(message.into())
    }

    pub(crate) fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }
}
