use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A cube or function does not belong to the grid it is used with.
    #[error("domain error: {0}")]
    Domain(String),

    /// An exponent, tolerance or other numeric parameter is out of range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// An experiment configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
