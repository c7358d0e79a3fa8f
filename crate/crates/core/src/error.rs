use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("map dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("input length {got} does not match expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid action {action}: only {n_actions} collaborators")]
    InvalidAction { action: usize, n_actions: usize },

    #[error("episode already finished after {0} slots")]
    EpisodeFinished(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint schema mismatch: {0}")]
    Schema(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::Schema(_) => 4,
            _ => 1,
        }
    }
}
