//! Minimal dense numeric engine with reverse-mode differentiation.
//!
//! Float64 compute, float32 storage. The op set covers exactly what a
//! masked-attention sequence classifier needs: matmul, elementwise ops,
//! concat/slice, linear, layer norm, dropout, masked softmax and cross
//! entropy, plus Adam and a central-difference gradient checker.

mod adam;
mod error;
mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use adam::Adam;
pub use error::TensorError;
pub use gradcheck::{grad_check, numeric_gradients, rel_err, GradCheckEntry, GradCheckReport};
pub use params::{ParamId, ParamSet, Parameter};
pub use rng::CounterRng;
pub use tape::{Tape, Var};
pub use tensor::{BoolMask, Tensor};
