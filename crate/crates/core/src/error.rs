use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// The caller violated an ordering or structural requirement of a channel or statistic.
    #[error("protocol violation: {0}")]
    Protocol(String),
    /// A simulation or curve configuration failed validation.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// The requested combination of components is not supported.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    /// A state that the mathematics rules out was reached.
    #[error("impossible state: {0}")]
    ImpossibleState(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param_err(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn protocol_err(msg: impl Into<String>) -> Error {
    Error::Protocol(msg.into())
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn unsupported_err(msg: impl Into<String>) -> Error {
    Error::Unsupported(msg.into())
}
