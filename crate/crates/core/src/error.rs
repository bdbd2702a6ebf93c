use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("manifest not found: {0}")]
    ManifestNotFound(PathBuf),
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("inconsistent raster size: {0}")]
    InconsistentRasterSize(String),
    #[error("undeclared instance id {0}")]
    UndeclaredInstanceId(u8),
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },
    #[error("malformed {kind} file: {why}")]
    Format { kind: &'static str, why: String },
    #[error("diverged parameters")]
    DivergedParameters,
    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },
    #[error("no boundary: object {0} has an empty region")]
    NoBoundary(u8),
    #[error("target unreachable: IoU {reached:.4} after {iterations} iterations (target {target})")]
    TargetUnreachable {
        target: f64,
        reached: f64,
        iterations: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(what: &'static str, why: impl Into<String>) -> Error {
    Error::Invalid {
        what,
        why: why.into(),
    }
}
