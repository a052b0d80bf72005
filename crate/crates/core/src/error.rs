use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A constructor or config value failed validation.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    /// An exact computation was refused because the state space is too large.
    #[error("state space of size {size} exceeds cap {cap}")]
    TooLarge { size: usize, cap: usize },

    /// A config file could not be read or parsed.
    #[error("config: {0}")]
    Config(String),

    /// An internal invariant did not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
