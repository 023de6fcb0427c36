use alloc::string::String;

use crate::tensor::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("non-finite gradient for weight `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss {0} at step {1}")]
    NonFiniteLoss(f64, u64),
    #[error("densify needs at least one depth measurement")]
    NoMeasurements,
    #[error("evaluation mask selects no pixels")]
    EmptyMask,
}
