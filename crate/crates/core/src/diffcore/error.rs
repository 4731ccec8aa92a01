use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, found {found}")]
    Shape { op: &'static str, dim: String, expected: usize, found: usize },

    #[error("{op}: expected a rank-{expected} tensor, found rank {found}")]
    Rank { op: &'static str, expected: usize, found: usize },

    #[error("{op}: invalid argument: {reason}")]
    Invalid { op: &'static str, reason: String },

    #[error("maxpool2: spatial extent {extent} along {axis} is odd")]
    OddExtent { axis: &'static str, extent: usize },

    #[error("batchnorm2d: train mode needs at least 2 values per channel, got {count}")]
    DegenerateBatch { count: usize },

    #[error("bce_with_logits: target {value} at index {index} is not binary")]
    NonBinaryTarget { index: usize, value: f64 },

    #[error("backward: loss must be a scalar, found {numel} elements")]
    NotScalar { numel: usize },

    #[error("backward: graph has already been consumed by a previous backward pass")]
    GraphConsumed,

    #[error("non-finite value in {what}")]
    NonFinite { what: String },
}

impl DiffError {
    pub(crate) fn shape(op: &'static str, dim: impl Into<String>, expected: usize, found: usize) -> Self {
        DiffError::Shape { op, dim: dim.into(), expected, found }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        DiffError::Invalid { op, reason: reason.into() }
    }
}
