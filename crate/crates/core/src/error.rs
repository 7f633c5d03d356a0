use std::io;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Exhaustive enumeration would exceed the configured budget.
    #[error("enumeration of {outcomes} outcomes (V^L = {vocab}^{len}) exceeds budget {budget}")]
    Budget {
        vocab: usize,
        len: usize,
        outcomes: f64,
        budget: u64,
    },

    /// An operation was called on an object in the wrong state.
    #[error("state error: {0}")]
    State(String),

    /// The loss became non-finite while training.
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },

    /// Training diverged: the epoch loss stayed above 10x its initial value.
    #[error("training diverged at epoch {epoch}: loss {loss} vs initial {initial}")]
    Diverged {
        epoch: usize,
        loss: f64,
        initial: f64,
    },

    /// A checkpoint or data file failed to parse or verify.
    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
