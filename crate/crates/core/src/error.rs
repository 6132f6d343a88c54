use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pretraining / fine-tuning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("scene of {height}x{width} is smaller than crop size {crop}")]
    SceneTooSmall {
        height: usize,
        width: usize,
        crop: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("zero-norm embedding at index {0}")]
    ZeroNorm(usize),

    #[error("need at least {needed} positive pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },

    #[error("could not sample a non-degenerate crop window after {0} attempts")]
    DegenerateCrop(usize),

    #[error("unknown parameter group `{0}`")]
    UnknownGroup(String),

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("class id {id} outside [0, {num_classes})")]
    ClassOutOfRange { id: usize, num_classes: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by user input (bad config, missing files,
    /// invalid arguments) as opposed to internal faults.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Divergence { .. } | Error::Shape(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
