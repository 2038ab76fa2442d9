//! Analytic activation accounting.
//!
//! Walks the shapes a level's generator and discriminators produce for
//! one training example without allocating anything, so it also works for
//! configurations far too large to build. Every video-shaped (rank-5)
//! intermediate that the tape keeps for the backward pass is counted once:
//! convolution, normalization, nonlinearity, resampling, concatenation and
//! residual-sum outputs. Per-sample vectors (noise, embeddings, gains,
//! scores) are left out; they do not depend on video length.

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, LevelConfig, TemporalUnit};
use crate::error::{HvgError, Result};

/// `[T, C, H, W]` of one example.
pub type Shape4 = [usize; 4];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Walk {
    pub elements: u64,
    pub tensors: usize,
}

impl Walk {
    fn put(&mut self, s: Shape4) -> Shape4 {
        self.elements += s.iter().map(|&d| d as u64).product::<u64>();
        self.tensors += 1;
        s
    }
}

fn with_c(s: Shape4, c: usize) -> Shape4 {
    [s[0], c, s[2], s[3]]
}

fn up(s: Shape4, k: usize) -> Shape4 {
    [s[0], s[1], s[2] * k, s[3] * k]
}

/// `CBN → ReLU → [up] → conv1 → CBN → ReLU → conv2`, shortcut, sum.
fn res_block_g(w: &mut Walk, x: Shape4, out: usize, upsample: bool, separable: bool) -> Shape4 {
    let k = if upsample { 2 } else { 1 };
    w.put(x); // bn1
    w.put(x); // relu
    let mut h = x;
    if upsample {
        h = w.put(up(x, 2));
    }
    if separable {
        w.put(with_c(h, out));
    }
    h = w.put(with_c(h, out));
    w.put(h);
    w.put(h);
    if separable {
        w.put(h);
    }
    h = w.put(h);
    if upsample {
        w.put(up(x, k));
    }
    if x[1] != out {
        w.put(with_c(up(x, k), out));
    }
    w.put(h)
}

/// Per step: the input slice, `[x ∥ h]`, two gates with sigmoids, `r·h`,
/// `[x ∥ r·h]`, candidate with ReLU, and the three update terms; then the
/// concatenated states.
fn conv_gru(w: &mut Walk, x: Shape4) -> Shape4 {
    let step = [1, x[1], x[2], x[3]];
    let both = with_c(step, 2 * x[1]);
    for _ in 0..x[0] {
        w.put(step);
        w.put(both);
        for _ in 0..4 {
            w.put(step); // gate conv, sigmoid (reset and update)
        }
        w.put(step); // r·h
        w.put(both);
        for _ in 0..5 {
            w.put(step); // candidate conv, relu, difference, product, sum
        }
    }
    w.put(x)
}

fn temporal_layer(w: &mut Walk, x: Shape4, unit: TemporalUnit) -> Shape4 {
    match unit {
        TemporalUnit::ConvGru => conv_gru(w, x),
        TemporalUnit::Separable3d => res_block_g(w, x, x[1], false, true),
    }
}

fn head(w: &mut Walk, x: Shape4) -> Shape4 {
    w.put(x);
    w.put(x);
    let y = w.put(with_c(x, 3));
    w.put(y)
}

/// Output shape and activations of a generator for one example. Level 1
/// generates `frames` frames; an upsampler refines a condition of `frames`
/// frames.
pub fn walk_generator(cfg: &LevelConfig, index: usize, frames: usize) -> Result<(Shape4, Walk)> {
    if frames == 0 {
        return Err(HvgError::InvalidArgument("cannot account for 0 frames".into()));
    }
    let mut w = Walk::default();
    let n = cfg.multipliers.len();
    let c0 = cfg.ch * cfg.multipliers[0];
    let mut x;
    let mut taps = Vec::new();
    if index == 0 {
        x = w.put([frames, c0, 4, 4]); // replicated seed
    } else {
        let cond = cfg.condition_resolution();
        let t = frames * cfg.temporal_factor;
        let base = cfg.base_resolution();
        w.put([t, 3, cond, cond]); // replicated condition
        let mut sizes = vec![base];
        for u in 0..n {
            let res_in = base << u;
            let res_out = if u + 1 < n { res_in * 2 } else { res_in };
            for r in [res_in, res_out, res_out] {
                taps.push(r <= cond);
                if r <= cond && !sizes.contains(&r) {
                    sizes.push(r);
                }
            }
        }
        for r in sizes {
            if r != cond {
                w.put([t, 3, cond, r]);
            }
            w.put([t, 3, r, r]);
        }
        x = w.put([t, c0, base, base]); // stem
    }
    let mut tap = 0;
    for (u, &m) in cfg.multipliers.iter().enumerate() {
        let c = cfg.ch * m;
        for stage in 0..3 {
            x = match stage {
                0 => temporal_layer(&mut w, x, cfg.temporal_unit),
                1 => res_block_g(&mut w, x, c, u + 1 < n, false),
                _ => res_block_g(&mut w, x, c, false, false),
            };
            if taps.get(tap).copied().unwrap_or(false) {
                w.put(x);
                w.put(x);
            }
            tap += 1;
        }
    }
    let y = head(&mut w, x);
    if index == 0 && y[2] != cfg.resolution {
        return Err(HvgError::Shape(format!("level 1 walk ends at {} pixels, config says {}", y[2], cfg.resolution)));
    }
    if index > 0 && y[2] != cfg.resolution {
        return Err(HvgError::Shape(format!("upsampler walk ends at {} pixels, config says {}", y[2], cfg.resolution)));
    }
    Ok((y, w))
}

fn res_block_d(w: &mut Walk, x: Shape4, out: usize, down: bool, pre: bool) -> Shape4 {
    if pre {
        w.put(x);
    }
    let mut h = w.put(with_c(x, out));
    w.put(h);
    h = w.put(h);
    let mut s = x;
    if x[1] != out {
        s = w.put(with_c(x, out));
    }
    if down {
        h = w.put([h[0], h[1], h[2] / 2, h[3] / 2]);
        w.put([s[0], out, s[2] / 2, s[3] / 2]);
    }
    w.put(h)
}

fn stack_d(w: &mut Walk, mut x: Shape4, ch: usize, mults: &[usize]) -> Shape4 {
    for (i, &m) in mults.iter().enumerate() {
        let down = i + 1 < mults.len() && x[2] >= 2 && x[2] % 2 == 0;
        x = res_block_d(w, x, ch * m, down, i > 0);
    }
    w.put(x)
}

/// Activations of all discriminators of a level on one example of
/// `frames` output frames (real and fake examples each pay this).
pub fn walk_discriminators(cfg: &LevelConfig, index: usize, frames: usize) -> Walk {
    let mut w = Walk::default();
    let r = cfg.resolution;
    let k = cfg.spatial_frames.min(frames);
    w.put([k, 3, r, r]);
    stack_d(&mut w, [k, 3, r, r], cfg.d_ch, &cfg.d_multipliers);
    let half = w.put([frames, 3, r / 2, r / 2]);
    stack_d(&mut w, half, cfg.d_ch, &cfg.d_multipliers);
    if index > 0 && cfg.matching_d {
        let c = cfg.condition_resolution();
        let low = frames / cfg.temporal_factor;
        w.put([low, 3, r, r]);
        if cfg.spatial_factor > 1 {
            w.put([low, 3, c, c]);
        }
        let pair = w.put([low, 6, c, c]);
        stack_d(&mut w, pair, cfg.d_ch, &cfg.d_multipliers);
    }
    w
}

/// Activation count of one level's training example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelActivations {
    /// 1-based level.
    pub level: usize,
    /// Frames the level's generator outputs per training example.
    pub frames: usize,
    pub generator: u64,
    pub discriminators: u64,
    pub total: u64,
    pub output: Shape4,
}

pub fn level_activations(cfg: &LevelConfig, index: usize, frames_in: usize) -> Result<LevelActivations> {
    let (out, g) = walk_generator(cfg, index, frames_in)?;
    let d = walk_discriminators(cfg, index, out[0]);
    Ok(LevelActivations {
        level: index + 1,
        frames: out[0],
        generator: g.elements,
        discriminators: d.elements,
        total: g.elements + d.elements,
        output: out,
    })
}

/// Per-level activations when the hierarchy is trained to produce
/// `t_total` output frames: level 1 generates `t_total / ΠK_T` frames,
/// upsamplers always see their fixed window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub t_total: usize,
    pub levels: Vec<LevelActivations>,
    /// Sum over levels: levels are trained one at a time, but this is the
    /// cost of training the whole hierarchy once per step.
    pub hierarchical: u64,
    /// Largest single level, the peak when levels train separately.
    pub peak: u64,
    /// A single level generating all `t_total` frames at full resolution.
    pub end_to_end: u64,
}

/// Level-1 architecture grown to the finest resolution: generator units
/// are appended with the last multiplier until the output size is reached
/// and the discriminators get leading width-1 blocks to match the finest
/// level's depth.
pub fn end_to_end_config(exp: &ExperimentConfig) -> LevelConfig {
    let first = &exp.levels[0];
    let last = exp.levels.last().expect("validated");
    let mut cfg = first.clone();
    while 4usize << (cfg.multipliers.len() - 1) < last.resolution {
        let m = *cfg.multipliers.last().expect("non-empty");
        cfg.multipliers.push(m);
    }
    cfg.resolution = last.resolution;
    while cfg.d_multipliers.len() < last.d_multipliers.len() {
        cfg.d_multipliers.insert(0, 1);
    }
    cfg
}

pub fn activation_accounting(exp: &ExperimentConfig, t_total: usize) -> Result<Accounting> {
    let kt = exp.temporal_product(exp.levels.len() - 1);
    if t_total == 0 || t_total % kt != 0 {
        return Err(HvgError::InvalidArgument(format!("{t_total} output frames are not a multiple of ΠK_T = {kt}")));
    }
    let mut levels = Vec::with_capacity(exp.levels.len());
    for (i, l) in exp.levels.iter().enumerate() {
        let frames = if i == 0 { t_total / kt } else { l.frames };
        levels.push(level_activations(l, i, frames)?);
    }
    let hierarchical = levels.iter().map(|l| l.total).sum();
    let peak = levels.iter().map(|l| l.total).max().unwrap_or(0);
    let end_to_end = level_activations(&end_to_end_config(exp), 0, t_total)?.total;
    Ok(Accounting { t_total, levels, hierarchical, peak, end_to_end })
}

/// CSV `T_total,level,elements` with `level` a number, `hierarchical` or
/// `end_to_end`.
pub fn scaling_csv(rows: &[Accounting]) -> String {
    let mut s = String::from("T_total,level,elements\n");
    for a in rows {
        for l in &a.levels {
            s.push_str(&format!("{},{},{}\n", a.t_total, l.level, l.total));
        }
        s.push_str(&format!("{},hierarchical,{}\n", a.t_total, a.hierarchical));
        s.push_str(&format!("{},end_to_end,{}\n", a.t_total, a.end_to_end));
    }
    s
}

/// Output shape of every level under a full unroll from `first_frames`,
/// checked against the configs. Needs no model weights.
pub fn dry_run_shapes(exp: &ExperimentConfig, first_frames: usize) -> Result<Vec<Shape4>> {
    exp.validate()?;
    let mut out = Vec::with_capacity(exp.levels.len());
    let mut frames = first_frames;
    for (i, l) in exp.levels.iter().enumerate() {
        let (y, _) = walk_generator(l, i, frames)?;
        if i > 0 && y[0] != frames * l.temporal_factor {
            return Err(HvgError::Shape(format!("level {} produced {} frames from {frames}", i + 1, y[0])));
        }
        frames = y[0];
        out.push(y);
    }
    Ok(out)
}
