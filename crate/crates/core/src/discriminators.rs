//! Spatial, temporal and matching discriminators. None of them normalize
//! activations; every weight is spectrally normalized.

use hvg_tensor::Var;
use rand::seq::index::sample;
use rand::Rng;

use crate::config::LevelConfig;
use crate::error::{HvgError, Result};
use crate::layers::{Embedding, Fwd, Linear, Module, ResBlockD, Visitor};
use crate::video::temporal_indices;

/// Blocks for `multipliers`, downsampling ×2 after every block but the last
/// while the feature map is at least 2 pixels and even. The first
/// `three_d` blocks use `3×3×3` kernels.
fn build_stack(
    in_ch: usize,
    ch: usize,
    multipliers: &[usize],
    resolution: usize,
    three_d: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ResBlockD>> {
    let mut blocks = Vec::with_capacity(multipliers.len());
    let (mut c_prev, mut res) = (in_ch, resolution);
    for (i, &m) in multipliers.iter().enumerate() {
        let down = i + 1 < multipliers.len() && res >= 2 && res % 2 == 0;
        blocks.push(ResBlockD::new(c_prev, ch * m, down, i < three_d, i > 0, rng)?);
        if down {
            res /= 2;
        }
        c_prev = ch * m;
    }
    Ok(blocks)
}

fn run_stack(blocks: &mut [ResBlockD], fwd: &mut Fwd<'_>, mut x: Var) -> Result<Var> {
    for b in blocks {
        x = b.forward(fwd, x)?;
    }
    Ok(fwd.tape.relu(x))
}

/// Linear score plus the optional projection term `⟨embed(y), h⟩`.
fn score(fwd: &mut Fwd<'_>, out: &mut Linear, embed: Option<&mut Embedding>, h: Var, labels: Option<&[usize]>) -> Result<Var> {
    let s = out.forward(fwd, h)?;
    match (embed, labels) {
        (Some(e), Some(y)) => {
            let ey = e.forward(fwd, y)?;
            let p = fwd.tape.mul(ey, h);
            let p = fwd.tape.sum_axes(p, &[1]);
            Ok(fwd.tape.add(s, p))
        }
        (Some(_), None) => Err(HvgError::InvalidArgument("class-conditional discriminator needs labels".into())),
        (None, _) => Ok(s),
    }
}

fn final_channels(blocks: &[ResBlockD]) -> usize {
    blocks.last().map(|b| b.out_ch).unwrap_or(0)
}

/// Per-frame 2D discriminator on `k` frames sampled from each video.
#[derive(Clone, Debug)]
pub struct SpatialD {
    pub frames: usize,
    pub resolution: usize,
    pub blocks: Vec<ResBlockD>,
    pub out: Linear,
    pub embed: Option<Embedding>,
}

impl SpatialD {
    pub fn new(cfg: &LevelConfig, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        let blocks = build_stack(3, cfg.d_ch, &cfg.d_multipliers, cfg.resolution, 0, rng)?;
        let c = final_channels(&blocks);
        Ok(Self {
            frames: cfg.spatial_frames,
            resolution: cfg.resolution,
            out: Linear::new(c, 1, true, rng)?,
            embed: cfg.class_conditional.then(|| Embedding::new(classes, c, true, rng)).transpose()?,
            blocks,
        })
    }

    /// `k` distinct frame indices per batch element, in sampling order.
    pub fn sample_frames(&self, batch: usize, frames: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
        if self.frames > frames {
            return Err(HvgError::InvalidArgument(format!(
                "spatial discriminator samples {} frames from a {frames}-frame video",
                self.frames
            )));
        }
        Ok((0..batch).map(|_| sample(rng, frames, self.frames).into_vec()).collect())
    }

    /// Scores `[B, k]` of the frames `picks[b]` of each video.
    pub fn forward(&mut self, fwd: &mut Fwd<'_>, x: Var, labels: Option<&[usize]>, picks: &[Vec<usize>]) -> Result<Var> {
        let s = fwd.tape.shape(x).to_vec();
        if s.len() != 5 || s[2] != 3 || s[3] != self.resolution || s[4] != self.resolution {
            return Err(HvgError::Shape(format!("spatial discriminator expects [B,T,3,{0},{0}], got {s:?}", self.resolution)));
        }
        let (b, t) = (s[0], s[1]);
        if picks.len() != b || picks.iter().any(|p| p.len() != self.frames || p.iter().any(|&f| f >= t)) {
            return Err(HvgError::InvalidArgument(format!("need {} valid frame indices per video", self.frames)));
        }
        let k = self.frames;
        let flat = fwd.tape.reshape(x, &[1, b * t, 3, s[3], s[4]]);
        let idx: Vec<usize> = picks.iter().enumerate().flat_map(|(i, p)| p.iter().map(move |f| i * t + f)).collect();
        let sel = fwd.tape.index_select(flat, 1, &idx);
        let sel = fwd.tape.reshape(sel, &[b, k, 3, s[3], s[4]]);
        let h = run_stack(&mut self.blocks, fwd, sel)?;
        let h = fwd.tape.sum_axes(h, &[3, 4]);
        let c = final_channels(&self.blocks);
        let h = fwd.tape.reshape(h, &[b * k, c]);
        let rep: Option<Vec<usize>> = labels.map(|y| y.iter().flat_map(|&l| std::iter::repeat_n(l, k)).collect());
        let sc = score(fwd, &mut self.out, self.embed.as_mut(), h, rep.as_deref())?;
        Ok(fwd.tape.reshape(sc, &[b, k]))
    }
}

impl Module for SpatialD {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.list("block", &mut self.blocks);
        v.child("out", &mut self.out);
        v.opt_child("embed", self.embed.as_mut().map(|e| e as &mut dyn Module));
    }
}

/// Whole-clip discriminator: optional spatial average-pool, two 3D blocks,
/// then per-frame 2D blocks, summed over time and space.
#[derive(Clone, Debug)]
pub struct TemporalD {
    pub in_channels: usize,
    pub input_downsample: usize,
    pub resolution: usize,
    pub blocks: Vec<ResBlockD>,
    pub out: Linear,
    pub embed: Option<Embedding>,
}

impl TemporalD {
    pub fn new(cfg: &LevelConfig, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::with_input(cfg, classes, 3, 2, cfg.resolution, rng)
    }

    pub fn with_input(
        cfg: &LevelConfig,
        classes: usize,
        in_channels: usize,
        input_downsample: usize,
        resolution: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input_downsample == 0 || resolution % input_downsample != 0 {
            return Err(HvgError::InvalidArgument(format!("cannot pool {resolution} pixels by {input_downsample}")));
        }
        let blocks = build_stack(in_channels, cfg.d_ch, &cfg.d_multipliers, resolution / input_downsample, 2, rng)?;
        let c = final_channels(&blocks);
        Ok(Self {
            in_channels,
            input_downsample,
            resolution,
            out: Linear::new(c, 1, true, rng)?,
            embed: cfg.class_conditional.then(|| Embedding::new(classes, c, true, rng)).transpose()?,
            blocks,
        })
    }

    /// Scores `[B, 1]`.
    pub fn forward(&mut self, fwd: &mut Fwd<'_>, x: Var, labels: Option<&[usize]>) -> Result<Var> {
        let s = fwd.tape.shape(x).to_vec();
        if s.len() != 5 || s[2] != self.in_channels || s[3] != self.resolution || s[4] != self.resolution {
            return Err(HvgError::Shape(format!(
                "temporal discriminator expects [B,T,{},{1},{1}], got {s:?}",
                self.in_channels, self.resolution
            )));
        }
        let x = if self.input_downsample > 1 { fwd.tape.avg_pool(x, self.input_downsample) } else { x };
        let h = run_stack(&mut self.blocks, fwd, x)?;
        let h = fwd.tape.sum_axes(h, &[1, 3, 4]);
        let h = fwd.tape.reshape(h, &[s[0], final_channels(&self.blocks)]);
        score(fwd, &mut self.out, self.embed.as_mut(), h, labels)
    }
}

impl Module for TemporalD {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.list("block", &mut self.blocks);
        v.child("out", &mut self.out);
        v.opt_child("embed", self.embed.as_mut().map(|e| e as &mut dyn Module));
    }
}

/// Judges `(x^l, x^{l−1})` pairs: `x^l` is reduced with phase-0 temporal
/// subsampling and the box-mean spatial reduction to the condition's shape,
/// concatenated with the raw condition on channels, and scored by a
/// temporal-style stack working at condition resolution.
#[derive(Clone, Debug)]
pub struct MatchingD {
    pub temporal_factor: usize,
    pub spatial_factor: usize,
    pub stack: TemporalD,
}

impl MatchingD {
    pub fn new(cfg: &LevelConfig, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            temporal_factor: cfg.temporal_factor,
            spatial_factor: cfg.spatial_factor,
            stack: TemporalD::with_input(cfg, classes, 6, 1, cfg.condition_resolution(), rng)?,
        })
    }

    /// `f_s(f_t(x_high))`, differentiable in `x_high`.
    pub fn reduce(&self, fwd: &mut Fwd<'_>, x_high: Var) -> Result<Var> {
        let t = fwd.tape.shape(x_high)[1];
        let idx = temporal_indices(t, self.temporal_factor, 0)?;
        let y = fwd.tape.index_select(x_high, 1, &idx);
        Ok(if self.spatial_factor > 1 { fwd.tape.avg_pool(y, self.spatial_factor) } else { y })
    }

    pub fn forward(&mut self, fwd: &mut Fwd<'_>, x_high: Var, x_low: Var, labels: Option<&[usize]>) -> Result<Var> {
        let (hs, ls) = (fwd.tape.shape(x_high).to_vec(), fwd.tape.shape(x_low).to_vec());
        let (kt, ks) = (self.temporal_factor, self.spatial_factor);
        let ok = hs.len() == 5
            && ls.len() == 5
            && hs[0] == ls[0]
            && hs[2] == 3
            && ls[2] == 3
            && hs[1] == ls[1] * kt
            && hs[3] == ls[3] * ks
            && hs[4] == ls[4] * ks;
        if !ok {
            return Err(HvgError::Shape(format!(
                "matching pair {hs:?} / {ls:?} is not related by (K_T={kt}, K_S={ks})"
            )));
        }
        let r = self.reduce(fwd, x_high)?;
        let pair = fwd.tape.concat(&[x_low, r], 2);
        self.stack.forward(fwd, pair, labels)
    }
}

impl Module for MatchingD {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.child("stack", &mut self.stack);
    }
}

/// All discriminators of one level.
#[derive(Clone, Debug)]
pub struct LevelDiscriminators {
    pub spatial: SpatialD,
    pub temporal: TemporalD,
    pub matching: Option<MatchingD>,
}

impl LevelDiscriminators {
    pub fn new(index: usize, cfg: &LevelConfig, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            spatial: SpatialD::new(cfg, classes, rng)?,
            temporal: TemporalD::new(cfg, classes, rng)?,
            matching: if index > 0 && cfg.matching_d { Some(MatchingD::new(cfg, classes, rng)?) } else { None },
        })
    }

    /// Number of scores per sample.
    pub fn width(&self) -> usize {
        self.spatial.frames + 1 + usize::from(self.matching.is_some())
    }

    /// `[spatial ∥ temporal ∥ matching?]`, shape `[B, width]`.
    pub fn scores(
        &mut self,
        fwd: &mut Fwd<'_>,
        x: Var,
        condition: Option<Var>,
        labels: Option<&[usize]>,
        picks: &[Vec<usize>],
    ) -> Result<Var> {
        let s = self.spatial.forward(fwd, x, labels, picks)?;
        let t = self.temporal.forward(fwd, x, labels)?;
        let parts = match (&mut self.matching, condition) {
            (Some(m), Some(c)) => vec![s, t, m.forward(fwd, x, c, labels)?],
            (Some(_), None) => {
                return Err(HvgError::InvalidArgument("matching discriminator needs the condition video".into()));
            }
            (None, _) => vec![s, t],
        };
        Ok(combined_scores(fwd, &parts))
    }
}

/// Concatenates per-head scores along the output axis.
pub fn combined_scores(fwd: &mut Fwd<'_>, heads: &[Var]) -> Var {
    fwd.tape.concat(heads, 1)
}

impl Module for LevelDiscriminators {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.child("spatial", &mut self.spatial);
        v.child("temporal", &mut self.temporal);
        v.opt_child("matching", self.matching.as_mut().map(|m| m as &mut dyn Module));
    }
}
