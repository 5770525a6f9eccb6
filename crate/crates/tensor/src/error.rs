use thiserror::Error;

/// Errors raised by tensor construction, tape operations and the optimizer.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: expected rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("masked softmax: row {row} has no admissible position")]
    AllMaskedRow { row: usize },

    #[error("dropout probability {p} outside [0, 1)")]
    InvalidDropout { p: f64 },

    #[error("cross entropy: target {target} out of range for {n_classes} classes")]
    TargetOutOfRange { target: usize, n_classes: usize },

    #[error("cross entropy: no valid targets in batch")]
    NoValidTargets,

    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },

    #[error("backward: tape is empty")]
    EmptyTape,

    #[error("duplicate parameter name `{0}`")]
    DuplicateParamName(String),

    #[error("learning rate {0} must be non-negative and finite")]
    InvalidLearningRate(f64),

    #[error("gradient check: forward pass is non-deterministic (two evaluations differ)")]
    NonDeterministicForward,

    #[error("slice_cols: columns {start}..{end} out of range for width {width}")]
    SliceOutOfRange {
        start: usize,
        end: usize,
        width: usize,
    },

    #[error("mask dimensions {rows}x{cols} do not match data length {len}")]
    BadMaskDims { rows: usize, cols: usize, len: usize },
}
