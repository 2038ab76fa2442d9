//! First-level and upsampling generators.

use hvg_tensor::{Tensor, Var};
use rand::Rng;

use crate::config::{LevelConfig, TemporalUnit};
use crate::error::{HvgError, Result};
use crate::layers::{Conv, ConvGru, CondBatchNorm, Embedding, Fwd, Linear, Module, ResBlockG, Visitor};
use crate::video::nearest_indices;

/// Noise and optional labels for one level.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    /// `[B, noise_dim]`.
    pub z: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl Latent {
    pub fn sample(batch: usize, noise_dim: usize, sigma: f64, labels: Option<Vec<usize>>, rng: &mut impl Rng) -> Self {
        let normal = rand_distr::StandardNormal;
        let z = Tensor::from_fn(&[batch, noise_dim], |_| sigma * rng.sample::<f64, _>(normal));
        Self { z, labels }
    }

    pub fn batch(&self) -> usize {
        self.z.dim(0)
    }
}

/// CBN condition `[embed(y) ∥ z]`, or `z` alone without an embedding.
pub fn latent_condition(fwd: &mut Fwd<'_>, embed: Option<&mut Embedding>, latent: &Latent) -> Result<Var> {
    let z = fwd.tape.constant(latent.z.clone());
    match (embed, &latent.labels) {
        (Some(e), Some(y)) => {
            if y.len() != latent.batch() {
                return Err(HvgError::Shape(format!("{} labels for a batch of {}", y.len(), latent.batch())));
            }
            let ey = e.forward(fwd, y)?;
            Ok(fwd.tape.concat(&[ey, z], 1))
        }
        (Some(_), None) => Err(HvgError::InvalidArgument("class-conditional generator needs labels".into())),
        (None, _) => Ok(z),
    }
}

/// Temporal layer at the start of each unit.
#[derive(Clone, Debug)]
pub enum TemporalLayer {
    Gru(ConvGru),
    Separable(ResBlockG),
}

impl TemporalLayer {
    fn new(kind: TemporalUnit, ch: usize, cond_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(match kind {
            TemporalUnit::ConvGru => TemporalLayer::Gru(ConvGru::new(ch, ch, rng)?),
            TemporalUnit::Separable3d => TemporalLayer::Separable(ResBlockG::new_separable(ch, ch, cond_dim, rng)?),
        })
    }

    fn forward(&mut self, fwd: &mut Fwd<'_>, x: Var, cond: Var) -> Result<Var> {
        match self {
            TemporalLayer::Gru(g) => g.forward(fwd, x),
            TemporalLayer::Separable(b) => b.forward(fwd, x, cond),
        }
    }

    /// Temporal convolutions on the path, or `None` for the recurrent layer
    /// whose receptive field is unbounded.
    pub fn temporal_convs(&self) -> Option<usize> {
        match self {
            TemporalLayer::Gru(_) => None,
            TemporalLayer::Separable(b) => Some(b.temporal_convs()),
        }
    }
}

impl Module for TemporalLayer {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        match self {
            TemporalLayer::Gru(g) => v.child("gru", g),
            TemporalLayer::Separable(b) => v.child("sep3d", b),
        }
    }
}

/// Temporal layer followed by two per-frame blocks; the first upsamples
/// ×2 except in the last unit.
#[derive(Clone, Debug)]
pub struct GenUnit {
    pub temporal: TemporalLayer,
    pub block1: ResBlockG,
    pub block2: ResBlockG,
}

impl Module for GenUnit {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.child("temporal", &mut self.temporal);
        v.child("block1", &mut self.block1);
        v.child("block2", &mut self.block2);
    }
}

fn build_units(cfg: &LevelConfig, rng: &mut impl Rng) -> Result<Vec<GenUnit>> {
    let cond = cfg.cond_dim();
    let n = cfg.multipliers.len();
    let mut c_prev = cfg.ch * cfg.multipliers[0];
    let mut units = Vec::with_capacity(n);
    for (u, &m) in cfg.multipliers.iter().enumerate() {
        let c = cfg.ch * m;
        units.push(GenUnit {
            temporal: TemporalLayer::new(cfg.temporal_unit, c_prev, cond, rng)?,
            block1: ResBlockG::new_2d(c_prev, c, cond, u + 1 < n, rng)?,
            block2: ResBlockG::new_2d(c, c, cond, false, rng)?,
        });
        c_prev = c;
    }
    Ok(units)
}

/// `CBN → ReLU → conv3×3 → tanh` to RGB.
#[derive(Clone, Debug)]
pub struct OutputHead {
    pub bn: CondBatchNorm,
    pub conv: Conv,
}

impl OutputHead {
    fn new(ch: usize, cond_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self { bn: CondBatchNorm::new(ch, cond_dim, rng)?, conv: Conv::conv2d(ch, 3, 3, true, rng)? })
    }

    fn forward(&mut self, fwd: &mut Fwd<'_>, x: Var, cond: Var) -> Result<Var> {
        let h = self.bn.forward(fwd, x, cond)?;
        let h = fwd.tape.relu(h);
        let h = self.conv.forward(fwd, h)?;
        Ok(fwd.tape.tanh(h))
    }
}

impl Module for OutputHead {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.child("bn", &mut self.bn);
        v.child("conv", &mut self.conv);
    }
}

fn class_embedding(cfg: &LevelConfig, classes: usize, rng: &mut impl Rng) -> Result<Option<Embedding>> {
    cfg.class_conditional.then(|| Embedding::new(classes, cfg.embed_dim, false, rng)).transpose()
}

/// Level-1 generator: `[embed(y) ∥ z] → linear → [B, C₀, 4, 4]`,
/// replicated over time, then the unit stack and the RGB head.
#[derive(Clone, Debug)]
pub struct FirstLevelG {
    pub noise_dim: usize,
    pub seed_channels: usize,
    pub embed: Option<Embedding>,
    pub seed: Linear,
    pub units: Vec<GenUnit>,
    pub head: OutputHead,
}

impl FirstLevelG {
    pub fn new(cfg: &LevelConfig, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        let units_n = cfg.multipliers.len();
        if units_n == 0 || cfg.resolution != 4 << (units_n - 1) {
            return Err(HvgError::InvalidArgument(format!(
                "{units_n} units cannot produce {0}x{0} frames from a 4x4 seed",
                cfg.resolution
            )));
        }
        let c0 = cfg.ch * cfg.multipliers[0];
        Ok(Self {
            noise_dim: cfg.noise_dim,
            seed_channels: c0,
            embed: class_embedding(cfg, classes, rng)?,
            seed: Linear::new(cfg.cond_dim(), c0 * 16, true, rng)?,
            units: build_units(cfg, rng)?,
            head: OutputHead::new(cfg.ch * cfg.multipliers[units_n - 1], cfg.cond_dim(), rng)?,
        })
    }

    /// `[B, frames, 3, H, W]` in `[-1, 1]`.
    pub fn forward(&mut self, fwd: &mut Fwd<'_>, latent: &Latent, frames: usize) -> Result<Var> {
        if frames == 0 {
            return Err(HvgError::InvalidArgument("cannot generate 0 frames".into()));
        }
        if latent.z.shape() != [latent.batch(), self.noise_dim] {
            return Err(HvgError::Shape(format!("noise must be [B,{}], got {:?}", self.noise_dim, latent.z.shape())));
        }
        let b = latent.batch();
        let cond = latent_condition(fwd, self.embed.as_mut(), latent)?;
        let s = self.seed.forward(fwd, cond)?;
        let s = fwd.tape.reshape(s, &[b, 1, self.seed_channels, 4, 4]);
        let mut x = fwd.tape.index_select(s, 1, &vec![0; frames]);
        for u in &mut self.units {
            x = u.temporal.forward(fwd, x, cond)?;
            x = u.block1.forward(fwd, x, cond)?;
            x = u.block2.forward(fwd, x, cond)?;
        }
        self.head.forward(fwd, x, cond)
    }
}

impl Module for FirstLevelG {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.opt_child("embed", self.embed.as_mut().map(|e| e as &mut dyn Module));
        v.child("seed", &mut self.seed);
        v.list("unit", &mut self.units);
        v.child("head", &mut self.head);
    }
}

/// Upsampling generator. The condition is replicated `K_T` times in time,
/// resized by nearest neighbour, and enters through a `1×1` stem at the
/// first unit's resolution and through `1×1` residual taps after every
/// block whose resolution does not exceed the condition's. Noise enters
/// only through the normalization layers.
#[derive(Clone, Debug)]
pub struct UpsamplerG {
    pub temporal_factor: usize,
    pub spatial_factor: usize,
    pub cond_resolution: usize,
    pub base_resolution: usize,
    pub noise_dim: usize,
    pub embed: Option<Embedding>,
    pub stem: Conv,
    pub units: Vec<GenUnit>,
    /// One slot per block (`3 × units`), `None` above the condition
    /// resolution.
    pub taps: Vec<Option<Conv>>,
    pub head: OutputHead,
}

impl UpsamplerG {
    pub fn new(cfg: &LevelConfig, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        let n = cfg.multipliers.len();
        let base = cfg.base_resolution();
        let cond_res = cfg.condition_resolution();
        if n == 0 || base == 0 || base << (n - 1) != cfg.resolution || base > cond_res {
            return Err(HvgError::InvalidArgument(format!(
                "{n} units from a {base}x{base} start cannot refine {cond_res}x{cond_res} to {0}x{0}",
                cfg.resolution
            )));
        }
        let cond = cfg.cond_dim();
        let mut taps = Vec::with_capacity(3 * n);
        let mut c_prev = cfg.ch * cfg.multipliers[0];
        for (u, &m) in cfg.multipliers.iter().enumerate() {
            let c = cfg.ch * m;
            let res_in = base << u;
            let res_out = if u + 1 < n { res_in * 2 } else { res_in };
            for (ch, res) in [(c_prev, res_in), (c, res_out), (c, res_out)] {
                taps.push(if res <= cond_res { Some(Conv::conv2d(3, ch, 1, true, rng)?) } else { None });
            }
            c_prev = c;
        }
        Ok(Self {
            temporal_factor: cfg.temporal_factor,
            spatial_factor: cfg.spatial_factor,
            cond_resolution: cond_res,
            base_resolution: base,
            noise_dim: cfg.noise_dim,
            embed: class_embedding(cfg, classes, rng)?,
            stem: Conv::conv2d(3, cfg.ch * cfg.multipliers[0], 1, true, rng)?,
            units: build_units(cfg, rng)?,
            taps,
            head: OutputHead::new(cfg.ch * cfg.multipliers[n - 1], cond, rng)?,
        })
    }

    /// Temporal convolutions between the condition and any output frame;
    /// `None` when a recurrent unit makes the receptive field unbounded.
    pub fn temporal_convs(&self) -> Option<usize> {
        self.units.iter().map(|u| u.temporal.temporal_convs()).sum()
    }

    /// Inclusive range of condition frames that output frame `t` depends on,
    /// for a condition of `cond_frames` frames.
    pub fn condition_span(&self, t: usize, cond_frames: usize) -> Option<(usize, usize)> {
        let r = self.temporal_convs()?;
        let hi_frames = cond_frames * self.temporal_factor;
        let lo = t.saturating_sub(r) / self.temporal_factor;
        let hi = (t + r).min(hi_frames - 1) / self.temporal_factor;
        Some((lo, hi))
    }

    /// Features entering the RGB head.
    pub fn features(&mut self, fwd: &mut Fwd<'_>, x_low: Var, latent: &Latent) -> Result<(Var, Var)> {
        let s = fwd.tape.shape(x_low).to_vec();
        if s.len() != 5 || s[2] != 3 || s[3] != self.cond_resolution || s[4] != self.cond_resolution || s[1] == 0 {
            return Err(HvgError::Shape(format!(
                "condition must be [B,T,3,{0},{0}], got {s:?}",
                self.cond_resolution
            )));
        }
        if s[0] != latent.batch() || latent.z.dim(1) != self.noise_dim {
            return Err(HvgError::Shape(format!(
                "noise {:?} does not match a condition batch of {}",
                latent.z.shape(),
                s[0]
            )));
        }
        let cond = latent_condition(fwd, self.embed.as_mut(), latent)?;
        let rep = fwd.tape.index_select(x_low, 1, &crate::video::replicate_indices(s[1], self.temporal_factor));
        let mut resized: Vec<(usize, Var)> = Vec::new();
        let mut resize = |fwd: &mut Fwd<'_>, res: usize| -> Var {
            if let Some(&(_, v)) = resized.iter().find(|(r, _)| *r == res) {
                return v;
            }
            let idx = nearest_indices(self.cond_resolution, res);
            let y = fwd.tape.index_select(rep, 3, &idx);
            let y = fwd.tape.index_select(y, 4, &idx);
            resized.push((res, y));
            y
        };
        let c0 = resize(fwd, self.base_resolution);
        let mut x = self.stem.forward(fwd, c0)?;
        let mut tap = 0;
        for u in &mut self.units {
            for stage in 0..3 {
                x = match stage {
                    0 => u.temporal.forward(fwd, x, cond)?,
                    1 => u.block1.forward(fwd, x, cond)?,
                    _ => u.block2.forward(fwd, x, cond)?,
                };
                if let Some(p) = &mut self.taps[tap] {
                    let res = fwd.tape.shape(x)[3];
                    let c = resize(fwd, res);
                    let r = p.forward(fwd, c)?;
                    x = fwd.tape.add(x, r);
                }
                tap += 1;
            }
        }
        Ok((x, cond))
    }

    /// `[B, T·K_T, 3, H·K_S, W·K_S]` in `[-1, 1]` from a condition
    /// `[B, T, 3, H, W]` of any length `T`.
    pub fn forward(&mut self, fwd: &mut Fwd<'_>, x_low: Var, latent: &Latent) -> Result<Var> {
        let (x, cond) = self.features(fwd, x_low, latent)?;
        self.head.forward(fwd, x, cond)
    }
}

impl Module for UpsamplerG {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.opt_child("embed", self.embed.as_mut().map(|e| e as &mut dyn Module));
        v.child("stem", &mut self.stem);
        v.list("unit", &mut self.units);
        for (i, t) in self.taps.iter_mut().enumerate() {
            v.opt_child(&format!("tap{i}"), t.as_mut().map(|t| t as &mut dyn Module));
        }
        v.child("head", &mut self.head);
    }
}

/// Generator of either kind.
#[derive(Clone, Debug)]
pub enum Generator {
    First(FirstLevelG),
    Upsampler(UpsamplerG),
}

impl Generator {
    pub fn new(index: usize, cfg: &LevelConfig, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(if index == 0 {
            Generator::First(FirstLevelG::new(cfg, classes, rng)?)
        } else {
            Generator::Upsampler(UpsamplerG::new(cfg, classes, rng)?)
        })
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            Generator::First(g) => g.noise_dim,
            Generator::Upsampler(g) => g.noise_dim,
        }
    }

    pub fn is_conditional(&self) -> bool {
        match self {
            Generator::First(g) => g.embed.is_some(),
            Generator::Upsampler(g) => g.embed.is_some(),
        }
    }

    /// Level 1 ignores `condition` and generates `frames`; upsamplers
    /// refine `condition`.
    pub fn forward(&mut self, fwd: &mut Fwd<'_>, latent: &Latent, condition: Option<Var>, frames: usize) -> Result<Var> {
        match (self, condition) {
            (Generator::First(g), _) => g.forward(fwd, latent, frames),
            (Generator::Upsampler(g), Some(c)) => g.forward(fwd, c, latent),
            (Generator::Upsampler(_), None) => Err(HvgError::InvalidArgument("upsampler needs a condition video".into())),
        }
    }
}

impl Module for Generator {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        match self {
            Generator::First(g) => g.visit(v),
            Generator::Upsampler(g) => g.visit(v),
        }
    }
}
