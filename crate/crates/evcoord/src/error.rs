//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid session data: {0}")]
    Session(String),

    #[error("invalid action: {0}")]
    Action(String),

    #[error("action space too large: {size} successor actions at t={t} exceed cap {cap}")]
    ActionSpaceExceeded { t: usize, size: u128, cap: u64 },

    #[error("infeasible schedule: {0}")]
    Infeasible(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("experiment: {0}")]
    Experiment(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
