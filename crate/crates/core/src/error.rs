use thiserror::Error;

/// Errors raised by the explanation, evaluation and model routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape error: {0}")]
    InputShape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),
    #[error("unsupported by this model: {0}")]
    Unsupported(String),
    #[error("training diverged at epoch {epoch}: loss became non-finite")]
    TrainingDiverged { epoch: usize, trace: Vec<f32> },
    #[error("inversion diverged at iteration {iteration}")]
    InversionDiverged { iteration: usize, trace: Vec<f64> },
    #[error("checkpoint not found: {0}")]
    CheckpointMissing(String),
    #[error("checkpoint version mismatch: file has version {found}, expected {expected}")]
    CheckpointVersion { found: u16, expected: u16 },
    #[error("corrupted checkpoint: {0}")]
    CheckpointCorrupted(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite<'a, I>(values: I, what: &str) -> Result<()>
where
    I: IntoIterator<Item = &'a f32>,
{
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains non-finite values")))
    }
}
