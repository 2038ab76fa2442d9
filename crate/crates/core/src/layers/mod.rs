//! Layers built on the `hvg-tensor` tape.
//!
//! Every layer takes a [`Fwd`] context carrying the tape, the
//! [`Mode`] and the absolute time offset of the input.

pub mod blocks;
pub mod gru;
pub mod init;
pub mod linear;
pub mod module;
pub mod norm;
pub mod spectral;

pub use blocks::{upsample_nearest, BlockConv, ResBlockD, ResBlockG};
pub use gru::{ConvGru, SepConv3d};
pub use init::{matrix_dims, orthogonal_init};
pub use linear::{Conv, Embedding, Linear};
pub use module::{Fwd, Mode, Module, Slot, Visitor};
pub use norm::{CondBatchNorm, RunningStats};
pub use spectral::{spectral_normalize, SpectralNorm, SpectralState};
