use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pose pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive depth ({0:.3e})")]
    NonPositiveDepth(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("need at least {required} correspondences, got {got}")]
    TooFewCorrespondences { required: usize, got: usize },
    #[error("no PnP hypothesis reached {min_inliers} inliers (best {best})")]
    DegenerateConfiguration { min_inliers: usize, best: usize },
    #[error("nothing of the mesh projects into the viewport")]
    EmptyRender,
    #[error("bounding box does not intersect the image")]
    EmptyIntersection,
    #[error("image must be at least {min}x{min}, got {width}x{height}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("k = {k} exceeds the template count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("only {0} voted pixels, need at least 6")]
    InsufficientCorrespondences(usize),
    #[error("positional encoding bands are inconsistent at pixel ({x}, {y})")]
    InconsistentBands { x: usize, y: usize },
    #[error("pose regressor produced a non-finite output")]
    NaNGuard,
    #[error("loss mask is empty")]
    EmptyMask,
    #[error("loss sequence is empty")]
    EmptySequence,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }
}
