use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{segment}`: expected {expected}, got {actual}")]
    DimensionMismatch {
        segment: String,
        expected: usize,
        actual: usize,
    },

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate model: every candidate scored non-finite")]
    DegenerateModel,

    #[error("replay buffer holds {have} transitions, need {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("episode already finished after {0} env steps; call reset")]
    EpisodeOver(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(segment: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            segment: segment.to_owned(),
            expected,
            actual,
        });
    }
    Ok(())
}
