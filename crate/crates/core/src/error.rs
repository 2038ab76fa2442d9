use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HvgError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("level {level} requires a trained checkpoint for level {missing} (looked in {dir})")]
    MissingPrerequisite { level: usize, missing: usize, dir: PathBuf },
    #[error("no normalization statistics recorded for timestep {timestep} (have {available}); recompute statistics for this length first")]
    MissingStats { timestep: usize, available: usize },
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: u64, detail: String },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("image error in {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl HvgError {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Shape(_) => "shape",
            Self::InvalidArgument(_) => "invalid_argument",
            Self::Config { .. } => "config",
            Self::MissingPrerequisite { .. } => "missing_prerequisite",
            Self::MissingStats { .. } => "missing_stats",
            Self::NonFiniteLoss { .. } => "non_finite_loss",
            Self::Dataset(_) => "dataset",
            Self::Checkpoint(_) => "checkpoint",
            Self::Io { .. } => "io",
            Self::Json { .. } => "json",
            Self::Image { .. } => "image",
        }
    }
}

pub type Result<T> = std::result::Result<T, HvgError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HvgError {
    let path = path.into();
    move |source| HvgError::Io { path, source }
}

pub(crate) fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> HvgError {
    let path = path.into();
    move |source| HvgError::Json { path, source }
}
