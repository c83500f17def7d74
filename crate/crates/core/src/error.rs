use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("6D rotation has a zero or parallel column")]
    DegenerateSixD,
    #[error("yaw about the up axis is undefined for this orientation")]
    GimbalDegenerate,
    #[error("quaternion is not unit (norm {norm})")]
    NonUnitQuaternion { norm: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("gradient tape does not match: {0}")]
    TapeMismatch(String),
    #[error("model shape mismatch: {0}")]
    ModelShapeMismatch(String),

    #[error("ensemble needs at least 2 members, got {0}")]
    InvalidEnsembleSize(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("innovation covariance is singular or ill-conditioned (condition {condition:e})")]
    SingularInnovation { condition: f64 },

    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("bad datagram magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("bad datagram length {actual} (expected {expected})")]
    BadLength { expected: usize, actual: usize },
    #[error("unknown device tag {0}")]
    UnknownDevice(u8),
    #[error("session is not calibrated")]
    NotCalibrated,
    #[error("no watch packets in the assembly interval")]
    EmptyInterval,
    #[error("corrupt capture: {0}")]
    CorruptCapture(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
