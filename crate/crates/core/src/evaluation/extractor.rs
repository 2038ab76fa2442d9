//! Small video classifier trained on labelled data, used as the feature
//! network of the Fréchet and inception metrics.
//!
//! `conv3×3×3 → ReLU → pool → conv3×3×3 → ReLU → pool → mean over
//! (T, H, W) → linear → ReLU → linear`. Averaging over time makes the
//! network accept clips of any length. The hidden layer gives the
//! "penultimate" features, the last layer the logits.

use std::collections::BTreeMap;

use hvg_tensor::{Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HvgError, Result};
use crate::layers::{Conv, Fwd, Linear, Mode, Module, Visitor};
use crate::training::Adam;
use crate::video::VideoTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub c1: usize,
    pub c2: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self { c1: 12, c2: 24, hidden: 32, lr: 5e-3, batch: 8 }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub resolution: usize,
    pub classes: usize,
    pub conv1: Conv,
    pub conv2: Conv,
    pub hidden: Linear,
    pub logits: Linear,
}

/// Penultimate features and logits of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub penultimate: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks_exact(t.dim(1)).map(|r| r.to_vec()).collect()
}

impl FeatureExtractor {
    pub fn new(resolution: usize, classes: usize, cfg: &ExtractorConfig, rng: &mut impl Rng) -> Result<Self> {
        if resolution % 4 != 0 || resolution == 0 || classes < 2 {
            return Err(HvgError::InvalidArgument(format!(
                "extractor needs a resolution divisible by 4 and at least 2 classes, got {resolution} and {classes}"
            )));
        }
        Ok(Self {
            resolution,
            classes,
            conv1: Conv::conv3d(3, cfg.c1, 3, false, rng)?,
            conv2: Conv::conv3d(cfg.c1, cfg.c2, 3, false, rng)?,
            hidden: Linear::new(cfg.c2, cfg.hidden, false, rng)?,
            logits: Linear::new(cfg.hidden, classes, false, rng)?,
        })
    }

    fn forward(&mut self, tape: &mut Tape, x: Tensor) -> Result<(Var, Var)> {
        let s = x.shape().to_vec();
        if s.len() != 5 || s[2] != 3 || s[3] != self.resolution || s[4] != self.resolution {
            return Err(HvgError::Shape(format!("extractor expects [B,T,3,{0},{0}], got {s:?}", self.resolution)));
        }
        let mut fwd = Fwd::new(tape, Mode::Frozen);
        let x = fwd.tape.constant(x);
        let h = self.conv1.forward(&mut fwd, x)?;
        let h = fwd.tape.relu(h);
        let h = fwd.tape.avg_pool(h, 2);
        let h = self.conv2.forward(&mut fwd, h)?;
        let h = fwd.tape.relu(h);
        let h = fwd.tape.avg_pool(h, 2);
        let h = fwd.tape.mean_axes(h, &[1, 3, 4]);
        let h = fwd.tape.reshape(h, &[s[0], self.conv2.out_channels()]);
        let p = self.hidden.forward(&mut fwd, h)?;
        let p = fwd.tape.relu(p);
        let l = self.logits.forward(&mut fwd, p)?;
        Ok((p, l))
    }

    pub fn features(&mut self, x: &VideoTensor) -> Result<Features> {
        let mut tape = Tape::no_grad();
        let (p, l) = self.forward(&mut tape, x.tensor().clone())?;
        Ok(Features { penultimate: rows(tape.value(p)), logits: rows(tape.value(l)) })
    }

    /// Features of many clips of possibly different lengths, batched by
    /// length.
    pub fn features_of(&mut self, clips: &[VideoTensor]) -> Result<Features> {
        let mut out = Features { penultimate: Vec::with_capacity(clips.len()), logits: Vec::with_capacity(clips.len()) };
        for c in clips {
            let f = self.features(c)?;
            out.penultimate.extend(f.penultimate);
            out.logits.extend(f.logits);
        }
        Ok(out)
    }

    /// Mean cross-entropy of `x` against `labels`, `log Σ exp(l) − l_y`.
    fn loss(&mut self, tape: &mut Tape, x: Tensor, labels: &[usize]) -> Result<Var> {
        let b = labels.len();
        let (_, l) = self.forward(tape, x)?;
        let lv = tape.value(l).clone();
        let c = self.classes;
        let m: Vec<f64> = (0..b).map(|i| lv.data()[i * c..(i + 1) * c].iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mv = tape.constant(Tensor::new(&[b, 1], m));
        let z = tape.sub(l, mv);
        let e = tape.exp(z);
        let s = tape.sum_axes(e, &[1]);
        let lse = tape.ln(s);
        let onehot = Tensor::from_fn(&[b, c], |i| if labels[i / c] == i % c { 1.0 } else { 0.0 });
        let oh = tape.constant(onehot);
        let picked = tape.mul(z, oh);
        let picked = tape.sum_axes(picked, &[1]);
        let d = tape.sub(lse, picked);
        Ok(tape.mean_all(d))
    }

    /// Adam on random clips: each step draws `cfg.batch` clips of one
    /// length from `lengths`, each a random contiguous crop of a random
    /// video. Returns the loss of every step.
    pub fn train(
        &mut self,
        videos: &[(VideoTensor, usize)],
        lengths: &[usize],
        iterations: usize,
        cfg: &ExtractorConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        if videos.is_empty() || lengths.is_empty() {
            return Err(HvgError::InvalidArgument("extractor training needs videos and clip lengths".into()));
        }
        let shortest = videos.iter().map(|(v, _)| v.frames()).min().unwrap_or(0);
        if lengths.iter().any(|&l| l == 0 || l > shortest) {
            return Err(HvgError::InvalidArgument(format!("clip lengths {lengths:?} must lie in 1..={shortest}")));
        }
        let mut opt = Adam { lr: cfg.lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: BTreeMap::new(), v: BTreeMap::new() };
        let mut losses = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let len = lengths[rng.random_range(0..lengths.len())];
            let mut clips = Vec::with_capacity(cfg.batch);
            let mut labels = Vec::with_capacity(cfg.batch);
            for _ in 0..cfg.batch {
                let (v, y) = &videos[rng.random_range(0..videos.len())];
                clips.push(random_crop(v, len, rng)?);
                labels.push(*y);
            }
            let x = VideoTensor::concat_batch(&clips.iter().collect::<Vec<_>>())?;
            let mut tape = Tape::new();
            let loss = self.loss(&mut tape, x.into_tensor(), &labels)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(HvgError::NonFiniteLoss { iteration: losses.len() as u64, detail: "extractor loss".into() });
            }
            let g = tape.backward(loss);
            opt.update(self, &g);
            losses.push(lv);
        }
        Ok(losses)
    }

    /// Fraction of clips whose arg-max logit equals the label.
    pub fn accuracy(&mut self, clips: &[(VideoTensor, usize)]) -> Result<f64> {
        if clips.is_empty() {
            return Err(HvgError::InvalidArgument("accuracy of no clips".into()));
        }
        let mut correct = 0;
        for (v, y) in clips {
            let f = self.features(v)?;
            for row in &f.logits {
                let arg = row.iter().enumerate().fold(0, |best, (i, &x)| if x > row[best] { i } else { best });
                correct += usize::from(arg == *y);
            }
        }
        Ok(correct as f64 / clips.len() as f64)
    }
}

/// Random contiguous `len`-frame crop of a single video.
pub fn random_crop(v: &VideoTensor, len: usize, rng: &mut impl Rng) -> Result<VideoTensor> {
    let t = v.frames();
    if len == 0 || len > t {
        return Err(HvgError::InvalidArgument(format!("cannot crop {len} frames from {t}")));
    }
    v.narrow_frames(rng.random_range(0..=t - len), len)
}

impl Module for FeatureExtractor {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.child("conv1", &mut self.conv1);
        v.child("conv2", &mut self.conv2);
        v.child("hidden", &mut self.hidden);
        v.child("logits", &mut self.logits);
    }
}
