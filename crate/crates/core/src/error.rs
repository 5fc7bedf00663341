use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A token id outside the vocabulary, or otherwise malformed input.
    #[error("invalid input: {0}")]
    Input(String),
    /// A call made against a state the operation does not accept,
    /// e.g. a prefix that already contains EOS.
    #[error("invalid state: {0}")]
    State(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("decode produced no finished hypothesis")]
    DecodeFailure,
    #[error("enumeration of {requested} sequences exceeds cap {cap}")]
    EnumerationCap { requested: u128, cap: u128 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
