//! Dense tensors, reverse-mode gradients and the small amount of linear
//! algebra the pipeline needs.
//!
//! Values are 64-bit floats in row-major order. There is no broadcasting
//! apart from the bias-style row additions ([`Tape::add_bias`],
//! [`Tape::film`]); everything else wants explicit shapes.

mod adam;
pub mod fft;
mod init;
mod linalg;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use init::{seeded_rng, uniform_fan_in, SeededRng};
pub use linalg::{matmul_into, Transpose};
pub use params::{Bound, Param, ParamGroup, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
