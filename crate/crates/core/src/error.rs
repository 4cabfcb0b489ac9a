use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "image {height}x{width} is not tiled by D={patch} overlap={overlap}; \
         largest valid crop is {crop_h}x{crop_w}"
    )]
    Geometry {
        height: usize,
        width: usize,
        patch: usize,
        overlap: usize,
        crop_h: usize,
        crop_w: usize,
    },

    #[error("wrong color space: expected {expected:?}, got {actual:?}")]
    ColorSpace {
        expected: crate::color::ColorSpace,
        actual: crate::color::ColorSpace,
    },

    #[error("non-finite value at step {step} in {term}")]
    NonFinite { step: u64, term: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
