use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate covariance (condition number {condition:.3e})")]
    DegenerateCovariance { condition: f64 },

    #[error("parameter layout mismatch: expected {expected} scalars, got {actual}")]
    Layout { expected: usize, actual: usize },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("binding error: {0}")]
    Binding(String),

    #[error("mesh has no triangles")]
    EmptyMesh,

    #[error("mask grid is empty")]
    EmptyGrid,

    #[error("incomplete mask grid: missing node (t={t}, p={p})")]
    IncompleteGrid { t: f64, p: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index misalignment: {0}")]
    Misaligned(String),

    #[error("no splats selected for target: {0}")]
    NoTarget(String),

    #[error("prompt refused: {0}")]
    Refusal(String),

    #[error("service returned status {status}: {body}")]
    Service { status: u16, body: String },

    #[error("service request failed (retryable): {0}")]
    Retryable(String),

    #[error("editor contract violated: {0}")]
    Contract(String),

    #[error("non-finite value at splat {splat}: {what}")]
    NonFinite { splat: usize, what: String },

    #[error("missing image for cell (t={t}, p={p}): {path}")]
    MissingCell { t: usize, p: usize, path: PathBuf },

    #[error("mesh topology mismatch: {0}")]
    Topology(String),

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}
