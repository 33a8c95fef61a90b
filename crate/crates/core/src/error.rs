use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or settings that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// Bayes denominator vanished at a grid cell.
    #[error("degenerate belief at cell ({row}, {col}): evidence {evidence:e}")]
    DegenerateBelief { row: usize, col: usize, evidence: f64 },

    /// A learner produced a non-finite gradient or parameter.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("{stage} failed at iteration {iteration}: {source}")]
    Stage {
        stage: &'static str,
        iteration: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn at_stage(self, stage: &'static str, iteration: u64) -> Self {
        Error::Stage {
            stage,
            iteration,
            source: Box::new(self),
        }
    }
}
