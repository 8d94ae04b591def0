use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("class {class} would receive no labeled samples")]
    RatioTooSmall { class: usize },

    #[error("split requires a fully labeled dataset")]
    NotFullyLabeled,

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("dimension mismatch{}: expected {expected}, found {found}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    DimensionMismatch {
        row: Option<usize>,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: class index {class} is out of range for {num_classes} classes")]
    UnknownClass {
        row: usize,
        class: usize,
        num_classes: usize,
    },

    #[error("class {class} has no labeled sample")]
    MissingLabeledClass { class: usize },

    #[error("dataset must contain both labeled and unlabeled samples")]
    DegenerateSplit,

    #[error("no unlabeled samples to cluster")]
    NoUnlabeled,

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
