use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("weights not normalized: vertex {vertex} sums to {sum}")]
    WeightsNotNormalized { vertex: usize, sum: f64 },

    #[error("skeleton not a tree: {0}")]
    SkeletonNotTree(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty mesh")]
    EmptyMesh,

    #[error("non-invertible skinning transform at vertex {vertex} (det {det:e})")]
    SingularTransform { vertex: usize, det: f64 },

    #[error("point {point:?} too close to scene box boundary for step {step}")]
    NearBoundary { point: [f64; 3], step: f64 },

    #[error("missing density gradient on sample {0}")]
    MissingGradient(usize),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("denoiser error: {0}")]
    Denoiser(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn malformed(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Malformed {
            what,
            detail: detail.into(),
        }
    }
}
