//! Small dense tensor library with tape-based reverse-mode autodiff.
//!
//! Everything is `f64` and single threaded so results are reproducible bit
//! for bit, which the video models built on top rely on for checkpoint and
//! unrolling checks.

pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use tape::{Gradients, Param, Tape, Var};
pub use tensor::{broadcast_shape, Tensor};
