use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Bad argument: shape mismatch, out-of-range index, invalid fraction.
    #[error("input error: {0}")]
    Input(String),
    /// Inconsistent model or plan configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed packed model bytes.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    /// Loss became non-finite.
    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
