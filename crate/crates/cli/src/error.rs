use paircam_core::Error as CoreError;
use thiserror::Error;

/// Failures surfaced by the command-line runner, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("unknown name: {0}")]
    Unknown(String),
    #[error("empty dataset: {0}")]
    Empty(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Unknown(_) => 3,
            CliError::Empty(_) => 4,
            CliError::Numeric(_) => 5,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Unsupported(_) => CliError::Unknown(msg),
            CoreError::Numeric(_)
            | CoreError::DegenerateEmbedding(_)
            | CoreError::TrainingDiverged { .. }
            | CoreError::InversionDiverged { .. } => CliError::Numeric(msg),
            _ => CliError::Input(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("json: {e}"))
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        CliError::Input(format!("image: {e}"))
    }
}
