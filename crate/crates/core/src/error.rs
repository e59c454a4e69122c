use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("prefix {prefix:?} has zero probability under the model")]
    DegeneratePrefix { prefix: Vec<usize> },

    #[error("invalid factorization: {0}")]
    InvalidFactorization(String),

    #[error("condition entry {index} of the initial representation is zero")]
    DegenerateCondition { index: usize },

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("enumeration of {requested} items exceeds the budget of {budget}")]
    Budget { requested: u128, budget: u128 },

    #[error("non-finite objective at step {step}")]
    Divergence { step: usize },

    #[error("fewer than {needed} shared anchor tokens (found {found})")]
    InsufficientAnchors { needed: usize, found: usize },

    #[error("export refused: {0}")]
    ExportRefused(String),

    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),

    #[error("scorer protocol error: {0}")]
    ScorerProtocol(String),

    #[error("format error in {path:?} at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code under the CLI contract: 1 for problems with the
    /// caller's input, 2 for internal or numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. }
            | Error::Factorization(_)
            | Error::ScorerUnavailable(_)
            | Error::ScorerProtocol(_) => 2,
            _ => 1,
        }
    }
}
