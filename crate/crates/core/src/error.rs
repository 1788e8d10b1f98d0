use thiserror::Error;

pub type Result<T> = std::result::Result<T, KfmcError>;

#[derive(Debug, Error)]
pub enum KfmcError {
    /// Caller passed inconsistent shapes or out-of-range parameters.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A solve or step produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("overflow: {0}")]
    Overflow(String),
}

impl KfmcError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        KfmcError::Argument(msg.into())
    }

    pub(crate) fn num(msg: impl Into<String>) -> Self {
        KfmcError::Numerical(msg.into())
    }
}
