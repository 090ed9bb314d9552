use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: dim={dim}, classes={classes}")]
    InvalidDimension { dim: usize, classes: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u64, num_classes: usize },

    #[error("non-finite value in input")]
    NonFiniteInput,

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("covariance is fixed and cannot be updated")]
    CovarianceFixed,

    #[error("training mode {0} does not permit this update")]
    ModelFrozen(&'static str),

    #[error("covariance of weights needs at least 2 classes, got {0}")]
    TooFewClasses(usize),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model has no live classes")]
    NoLiveClasses,

    #[error("index or translation is stale with respect to the model")]
    StaleIndex,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: u64, actual: u64 },

    #[error("payload has {extra} trailing bytes")]
    TrailingData { extra: u64 },

    #[error("non-finite loss at epoch {epoch} (step size too large?)")]
    NonFiniteLoss { epoch: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures that come from numerics rather than bad data or usage.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::NonFiniteLoss { .. }
        )
    }
}
