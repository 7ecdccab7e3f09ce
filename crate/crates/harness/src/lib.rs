//! Experiment orchestration for random-smoothing gradient descent: the
//! Table-1 style grid, loss-versus-smoothing curves, rate fits, schedule
//! tables and the verification suite.

pub mod config;
pub mod experiments;
pub mod output;
pub mod pool;
pub mod rate;
pub mod schedule_table;
pub mod seeds;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{cell}: {source}")]
    Learner { cell: String, source: Box<dyn std::error::Error + Send + Sync> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Other(String),
}

impl HarnessError {
    pub fn learner<E: std::error::Error + Send + Sync + 'static>(cell: impl Into<String>, e: E) -> Self {
        HarnessError::Learner { cell: cell.into(), source: Box::new(e) }
    }
}
