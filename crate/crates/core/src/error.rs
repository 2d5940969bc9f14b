use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): corners out of order or non-finite")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("image bounds {width}x{height} are smaller than the minimum box size {min_size}")]
    UnusableBounds { width: f64, height: f64, min_size: f64 },

    #[error("perturbation would produce a non-positive box size (dw={dw}, dh={dh})")]
    NonPositiveSize { dw: f64, dh: f64 },

    #[error("invalid noise level {0}: must satisfy 0 <= r < 0.5")]
    InvalidNoiseLevel(f64),

    #[error("cannot place objects in scene {scene} under the layout constraints")]
    InfeasibleLayout { scene: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value {value} outside the unit interval")]
    OutOfRange { value: f64 },

    #[error("non-finite feature at index {index}")]
    NonFiniteFeature { index: usize },

    #[error("object-aware selection requires a positive bag")]
    NegativeBag,

    #[error("training diverged at iteration {iteration}: total loss is not finite")]
    Diverged { iteration: usize },

    #[error("image {image_id} has no scene geometry; training and evaluation need synthetic scenes")]
    MissingScene { image_id: u64 },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
