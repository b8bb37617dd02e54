use thiserror::Error;

use crate::domain::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("replay miss: no scripted output for prompt starting {0:?}")]
    ReplayMiss(String),

    #[error("backend does not support {0}")]
    Capability(&'static str),

    #[error("horizon exhausted at step {step}: {message}")]
    Horizon { step: usize, message: String },

    #[error("training diverged at iteration {iteration}")]
    Training { iteration: usize },

    #[error("classification failed for batch {batch}: {message}")]
    Classification { batch: usize, message: String },

    #[error("run aborted at step {step}: {source}")]
    Aborted {
        step: usize,
        source: Box<Error>,
        partial: Box<crate::domain::Trajectory>,
    },

    #[error("prompt render error: {0}")]
    Render(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn backend(msg: impl Into<String>) -> Self {
        Error::Backend(msg.into())
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
