//! One trained or trainable hierarchy level: generator plus discriminators.

use hvg_tensor::Tape;
use rand::Rng;

use crate::config::LevelConfig;
use crate::discriminators::LevelDiscriminators;
use crate::error::{HvgError, Result};
use crate::generators::{Generator, Latent};
use crate::layers::{Fwd, Mode, Module, Visitor};
use crate::video::VideoTensor;

#[derive(Clone, Debug)]
pub struct LevelModel {
    /// 0-based position in the hierarchy.
    pub index: usize,
    pub config: LevelConfig,
    pub classes: usize,
    pub g: Generator,
    pub d: LevelDiscriminators,
}

impl LevelModel {
    pub fn new(index: usize, config: &LevelConfig, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            index,
            config: config.clone(),
            classes,
            g: Generator::new(index, config, classes, rng)?,
            d: LevelDiscriminators::new(index, config, classes, rng)?,
        })
    }

    pub fn is_first(&self) -> bool {
        self.index == 0
    }

    /// Labels fed to this level, `None` when it is unconditional.
    pub fn labels<'a>(&self, labels: &'a [usize]) -> Option<&'a [usize]> {
        self.config.class_conditional.then_some(labels)
    }

    pub fn latent(&self, batch: usize, sigma: f64, labels: &[usize], rng: &mut impl Rng) -> Latent {
        Latent::sample(batch, self.config.noise_dim, sigma, self.labels(labels).map(|l| l.to_vec()), rng)
    }

    /// Runs the generator without recording gradients. Level 1 generates
    /// `frames` frames; upsamplers refine `condition`. `t_offset` is the
    /// absolute timestep of the first output frame.
    pub fn generate(
        &mut self,
        mode: Mode,
        latent: &Latent,
        condition: Option<&VideoTensor>,
        frames: usize,
        t_offset: usize,
    ) -> Result<VideoTensor> {
        if !self.is_first() && condition.is_none() {
            return Err(HvgError::InvalidArgument(format!("level {} needs a condition video", self.index + 1)));
        }
        let mut tape = Tape::no_grad();
        let c = condition.map(|c| tape.constant(c.tensor().clone()));
        let y = {
            let mut fwd = Fwd::with_offset(&mut tape, mode, t_offset);
            self.g.forward(&mut fwd, latent, c, frames)?
        };
        VideoTensor::new(tape.value(y).clone())
    }
}

impl Module for LevelModel {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.child("g", &mut self.g);
        v.child("d", &mut self.d);
    }
}
