use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degree out of range: l = {0} (supported degrees are 0, 1, 2)")]
    DegreeOutOfRange(usize),

    #[error("direction is not unit-norm (|d| = {0})")]
    NotUnitDirection(f64),

    #[error("rotation matrix is not orthogonal (|R^T R - I| = {0:e})")]
    NotOrthogonal(f64),

    #[error("rotation matrix is improper (det = {0})")]
    ImproperRotation(f64),

    #[error("negative radius: {0}")]
    NegativeRadius(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("kernel realized for different spacing: kernel {kernel:?} mm, grid {grid:?} mm")]
    KernelSpacingMismatch { kernel: [f64; 3], grid: [f64; 3] },

    #[error(
        "network realized for different spacing; call build for this spacing \
         (instance {instance:?} mm, patch {patch:?} mm)"
    )]
    NetworkSpacingMismatch { instance: [f64; 3], patch: [f64; 3] },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in parameter tensor '{0}'")]
    NonFiniteGradient(String),

    #[error("{path}: bad {field}: {message}")]
    Format {
        path: PathBuf,
        field: &'static str,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, field: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            field,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
