//! Hierarchical video GANs.
//!
//! A first level generates a short, low-resolution video. Each further
//! level is a conditional upsampler that refines the previous level's output
//! spatially and temporally. Levels are trained one at a time on short
//! temporal crops and, being convolutional in time, run over the whole
//! previous output at inference.

pub mod config;
pub mod data;
pub mod discriminators;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod generators;
pub mod inference;
pub mod layers;
pub mod model;
pub mod training;
pub mod video;

pub use error::{HvgError, Result};
pub use video::{CropWindow, PyramidSample, VideoDims, VideoTensor};

/// The guide in `book/`, compiled so that its snippets stay correct.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/pyramids.md")]
    pub mod pyramids {}
    #[doc = include_str!("../../../book/src/models.md")]
    pub mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    pub mod sampling {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/scaling.md")]
    pub mod scaling {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    pub mod configuration {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    pub mod acceptance {}
}
