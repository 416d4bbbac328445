use std::io;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("derived eps undefined at t=0 (beta_bar is zero)")]
    DerivedEpsUndefined,

    #[error("UPS requires predictor gradient: {0}")]
    CapabilityMissing(String),

    #[error("degenerate computation: {0}")]
    Degenerate(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("predictor returned status {code}: {message}")]
    Status { code: u8, message: String },

    #[error("timed out after {0:?} waiting for predictor")]
    Timeout(std::time::Duration),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
