use alloc::string::String;
use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch across an exposure pair: {0}")]
    DimensionMismatch(String),
    #[error("crop size {size} exceeds image dimensions {h}x{w}")]
    CropTooLarge { size: usize, h: usize, w: usize },
    #[error("natural pool is empty")]
    EmptyPool,
    #[error("image too small: need at least {need} pixels per side, got {h}x{w}")]
    ImageTooSmall { need: usize, h: usize, w: usize },
    #[error("color loss requires a 3-channel image")]
    NotColorImage,
    #[error("no evaluable loss candidates for this input")]
    NoEvaluableCandidates,
    #[error("feature extractor unavailable: {0}")]
    ExtractorUnavailable(String),
    #[error("contrastive constraint requires at least one negative pair")]
    EmptyNegatives,
    #[error("non-finite loss encountered: {0}")]
    NonFiniteLoss(String),
    #[error("constant image has no defined correlation")]
    ConstantImage,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid image data: {0}")]
    InvalidImage(String),
}

pub type CoreResult<T> = core::result::Result<T, CoreError>;
