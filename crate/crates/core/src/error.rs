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

    #[error("ply parse error in {element}: {message}")]
    Ply { element: String, message: String },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("camera file line {line}: {message}")]
    CameraFile { line: usize, message: String },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(
        "non-finite loss at iteration {} (epoch {}, camera {}, r = {}): {:?}",
        .0.iteration, .0.epoch, .0.camera, .0.downsample, .0.report
    )]
    NonFiniteLoss(Box<crate::trainer::Diagnostic>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ply(element: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Ply {
            element: element.into(),
            message: message.into(),
        }
    }
}
