use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("duplicate image id `{0}`")]
    DuplicateId(String),

    #[error("unknown class label `{0}`")]
    UnknownLabel(String),

    #[error("class {label} has {count} images, fewer than k = {k}")]
    TooFewImages { label: String, count: usize, k: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown domain variant `{0}`")]
    UnknownVariant(String),

    #[error("domain variant {0} needs an enhancer model that is not configured")]
    MissingModel(String),

    #[error("unknown backbone preset `{0}`")]
    UnknownBackbone(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown image id `{0}`")]
    UnknownImage(String),

    #[error("mismatched setting tags: {0} vs {1}")]
    SettingMismatch(String, String),

    #[error("bad checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("corrupt cache entry {0}")]
    CacheCorrupt(PathBuf),

    #[error("train/test leakage: {0} image ids appear in both splits")]
    Leakage(usize),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input (files, configs, arguments) rather
    /// than failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::InvalidRecord { .. }
                | Error::DuplicateId(_)
                | Error::UnknownLabel(_)
                | Error::TooFewImages { .. }
                | Error::InvalidConfig(_)
                | Error::UnknownVariant(_)
                | Error::MissingModel(_)
                | Error::UnknownBackbone(_)
                | Error::DimensionMismatch(_)
                | Error::EmptyInput(_)
                | Error::UnknownImage(_)
                | Error::SettingMismatch(..)
        )
    }
}
