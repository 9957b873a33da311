use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("component {index}: box ({x}, {y}, {w}, {h}) lies outside the {canvas_w}x{canvas_h} canvas")]
    OutsideCanvas {
        index: usize,
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        canvas_w: u32,
        canvas_h: u32,
    },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid condition: {0}")]
    InvalidCondition(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("step {t} out of range 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed probability row {row}: {reason}")]
    Probability { row: usize, reason: String },
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
