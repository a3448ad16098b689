use thiserror::Error;

/// Errors produced by the estimation library and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// The iterative solver hit a non-finite value.
    #[error("solver error at iteration {iteration}: {message}")]
    Solver { iteration: usize, message: String },

    /// A configuration is infeasible or malformed.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
