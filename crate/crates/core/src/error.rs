use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("grid too small: {width}x{height}, need at least {min}x{min}")]
    GridTooSmall { width: usize, height: usize, min: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("negative value {value} at index {index} in a non-negative field")]
    NegativeValue { index: usize, value: f64 },

    #[error("unit mismatch: expected {expected:?}, got {actual:?}")]
    UnitMismatch {
        expected: crate::grid::UnitTag,
        actual: crate::grid::UnitTag,
    },

    #[error("time {t} outside [0, 1]")]
    TimeOutOfRange { t: f64 },

    #[error("invalid step: dt = {dt} with t = {t}")]
    InvalidStep { t: f64, dt: f64 },

    #[error("ground truth has zero energy")]
    ZeroEnergy,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("k = {k} exceeds database size {size}")]
    KTooLarge { k: usize, size: usize },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
