use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("not grid aligned: {0}")]
    NotGridAligned(String),
    #[error("inconsistent configuration: {0}")]
    InconsistentConfig(String),
    #[error("divergent: {0}")]
    Divergent(String),
    #[error("degenerate kernel: {0}")]
    Degenerate(String),
    #[error("evaluation point lies in the support of f: {0}")]
    OnSupport(String),
    #[error("hypothesis not met: {0}")]
    Hypothesis(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
