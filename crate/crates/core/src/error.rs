use thiserror::Error;

/// Crate-wide error type.
///
/// The variants are grouped by how the CLI maps them to exit codes:
/// configuration problems ([`Parameter`](Error::Parameter),
/// [`Model`](Error::Model), [`Domain`](Error::Domain),
/// [`Parse`](Error::Parse)), the enumeration/memory cap
/// ([`Capacity`](Error::Capacity)), and runtime verdicts
/// ([`Sampling`](Error::Sampling), [`Numerical`](Error::Numerical),
/// [`CheckFailed`](Error::CheckFailed)).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("model inconsistency: {0}")]
    Model(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand used all over the validation code.
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
