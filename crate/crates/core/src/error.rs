use thiserror::Error;

use crate::upscaling::GStarTable;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("root finder did not converge for xi = {xi:e} (residual {residual:e} after {iterations} iterations)")]
    RootNotConverged {
        xi: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("linear solver breakdown: relative residual {residual:e}")]
    SolverBreakdown { residual: f64 },

    #[error("Picard iteration did not converge in {iterations} iterations (last relative update {last_update:e})")]
    MaxIterationsExceeded { iterations: usize, last_update: f64 },

    #[error("G* table stopping criteria not reached within {levels} levels")]
    TableIncomplete {
        levels: usize,
        partial: Box<GStarTable>,
    },

    #[error("block {index}: {source}")]
    Block {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_block(self, index: usize) -> Self {
        Error::Block {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
