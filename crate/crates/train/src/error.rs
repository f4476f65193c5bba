use crate::train::TrainLog;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] deltamem_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    /// The loss went non-finite; `log` holds every step up to and including
    /// the failing one.
    #[error("training diverged at step {step}")]
    Diverged { step: usize, log: Box<TrainLog> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type TrainResult<T> = std::result::Result<T, TrainError>;
