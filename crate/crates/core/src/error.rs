use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("expected a {expected} spectrogram, got {found}")]
    Kind { expected: String, found: String },

    #[error("timestep {t} out of range 0..={max}")]
    Timestep { t: usize, max: usize },

    #[error("invalid step: {0}")]
    InvalidStep(String),

    #[error("scaler state error: {0}")]
    State(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("unsupported checkpoint format version {found} (this build reads up to {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("refusing to overwrite {0} (pass --force)")]
    Exists(PathBuf),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("yaml: {0}")]
    Yaml(#[from] serde_yaml::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
