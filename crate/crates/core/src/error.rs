//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("point too close to the camera plane (|z| = {z:.3e})")]
    CameraPlane { z: f64 },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("dataset error{}: {msg}", fmt_loc(.line, .id))]
    Data {
        line: Option<usize>,
        id: Option<String>,
        msg: String,
    },

    #[error("noise level {n} outside valid range {lo}..={hi}")]
    NoiseLevel { n: usize, lo: usize, hi: usize },

    #[error("posterior undefined at step {n}: 1 - alpha_bar = {gap:.3e}")]
    SingularPosterior { n: usize, gap: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Safetensors(#[from] safetensors::SafeTensorError),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Dataset error with no file location attached.
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data {
            line: None,
            id: None,
            msg: msg.into(),
        }
    }

    /// Attach a 1-based line number and record id to a dataset error.
    pub fn at(self, line: usize, id: Option<&str>) -> Self {
        match self {
            Error::Data { msg, .. } => Error::Data {
                line: Some(line),
                id: id.map(str::to_owned),
                msg,
            },
            other => Error::Data {
                line: Some(line),
                id: id.map(str::to_owned),
                msg: other.to_string(),
            },
        }
    }
}

fn fmt_loc(line: &Option<usize>, id: &Option<String>) -> String {
    match (line, id) {
        (Some(l), Some(i)) => format!(" at line {l} (id {i})"),
        (Some(l), None) => format!(" at line {l}"),
        (None, Some(i)) => format!(" (id {i})"),
        (None, None) => String::new(),
    }
}
