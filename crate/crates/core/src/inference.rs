//! Sampling from a trained hierarchy.
//!
//! Upsamplers are convolutional in time, so at inference each one runs over
//! the whole output of the level below, however long. Normalization
//! statistics are kept per absolute timestep, which means they must be
//! recomputed for the length that will be sampled before sampling in
//! [`Mode::Frozen`].

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HvgError, Result};
use crate::generators::{Generator, Latent};
use crate::layers::{Mode, Module};
use crate::model::LevelModel;
use crate::training::{checkpoint_exists, level_dir, load_model};
use crate::video::VideoTensor;

/// Default number of minibatches averaged when recomputing statistics.
pub const DEFAULT_STATS_PASSES: usize = 200;

/// A stack of trained levels, coarse to fine.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    pub levels: Vec<LevelModel>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatsOptions {
    pub passes: usize,
    pub batch: usize,
    pub sigma: f64,
    /// Frames generated by level 1; finer levels see the unrolled lengths.
    pub first_frames: usize,
}

/// Output of one run through the hierarchy.
#[derive(Clone, Debug)]
pub struct SampleRun {
    /// Output of every level, coarse to fine.
    pub outputs: Vec<VideoTensor>,
    /// Absolute index of frame 0 of each output.
    pub offsets: Vec<usize>,
    /// Absolute `[start, end)` frames of each output that equal the full
    /// unroll exactly. The whole output for a full run.
    pub exact: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
    pub sigma: f64,
}

impl SampleRun {
    pub fn finest(&self) -> &VideoTensor {
        self.outputs.last().expect("at least one level")
    }
}

/// Labels of `b` samples: cycled through the classes, or all zero for an
/// unconditional hierarchy.
pub fn balanced_labels(b: usize, classes: usize) -> Vec<usize> {
    (0..b).map(|i| i % classes.max(1)).collect()
}

impl Hierarchy {
    pub fn new(levels: Vec<LevelModel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(HvgError::InvalidArgument("a hierarchy needs at least one level".into()));
        }
        for (i, l) in levels.iter().enumerate() {
            if l.index != i {
                return Err(HvgError::InvalidArgument(format!("level at position {i} has index {}", l.index)));
            }
        }
        Ok(Self { levels })
    }

    /// Loads `levels` consecutive checkpoints from `root`, starting at level 1.
    pub fn load(root: &Path, levels: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(levels);
        for k in 0..levels {
            let dir = level_dir(root, k);
            if !checkpoint_exists(&dir) {
                return Err(HvgError::MissingPrerequisite { level: levels, missing: k + 1, dir });
            }
            out.push(load_model(&dir)?);
        }
        Self::new(out)
    }

    pub fn classes(&self) -> usize {
        self.levels[0].classes
    }

    /// Output length of every level when level 1 generates `first_frames`.
    pub fn output_frames(&self, first_frames: usize) -> Vec<usize> {
        let mut t = first_frames;
        self.levels
            .iter()
            .map(|l| {
                if l.index > 0 {
                    t *= l.config.temporal_factor;
                }
                t
            })
            .collect()
    }

    /// One latent per level, drawn in level order. Full and windowed runs
    /// share this, so both see identical noise.
    fn latents(&self, labels: &[usize], sigma: f64, rng: &mut impl Rng) -> Vec<Latent> {
        self.levels.iter().map(|m| m.latent(labels.len(), sigma, labels, rng)).collect()
    }

    /// Replaces the running statistics of every level, in hierarchy order,
    /// by averages over `passes` generated minibatches at the unrolled
    /// lengths of `opts.first_frames`. Lower levels run frozen on their
    /// already recomputed statistics while a level is being recomputed.
    /// Zero passes leave the statistics untouched.
    pub fn recompute_bn_stats(&mut self, opts: &StatsOptions, rng: &mut impl Rng) -> Result<()> {
        if opts.passes == 0 {
            return Ok(());
        }
        if opts.batch == 0 || opts.first_frames == 0 || !(opts.sigma > 0.0) {
            return Err(HvgError::InvalidArgument("statistics need a positive batch, length and sigma".into()));
        }
        let lens = self.output_frames(opts.first_frames);
        let classes = self.classes();
        for target in 0..self.levels.len() {
            self.levels[target].for_each_stats(&mut |_, s| s.truncate(lens[target]));
            for pass in 0..opts.passes {
                let labels: Vec<usize> = (0..opts.batch).map(|_| rng.random_range(0..classes)).collect();
                let lat = self.latents(&labels, opts.sigma, rng);
                let mut cur: Option<VideoTensor> = None;
                for (k, m) in self.levels.iter_mut().enumerate().take(target + 1) {
                    let mode = if k == target { Mode::Recompute { pass } } else { Mode::Frozen };
                    cur = Some(m.generate(mode, &lat[k], cur.as_ref(), opts.first_frames, 0)?);
                }
            }
        }
        Ok(())
    }

    /// Full unroll: level 1 generates `first_frames`, every upsampler
    /// refines the whole previous output.
    pub fn sample(&mut self, labels: &[usize], sigma: f64, first_frames: usize, rng: &mut impl Rng) -> Result<SampleRun> {
        let lat = self.latents(labels, sigma, rng);
        let mut outputs: Vec<VideoTensor> = Vec::with_capacity(self.levels.len());
        for (k, m) in self.levels.iter_mut().enumerate() {
            let y = m.generate(Mode::Frozen, &lat[k], outputs.last(), first_frames, 0)?;
            outputs.push(y);
        }
        let lens: Vec<usize> = outputs.iter().map(|o| o.frames()).collect();
        Ok(SampleRun {
            offsets: vec![0; lens.len()],
            exact: lens.iter().map(|&t| (0, t)).collect(),
            outputs,
            labels: labels.to_vec(),
            sigma,
        })
    }

    /// As [`Hierarchy::sample`] with the same draws from `rng`, but only
    /// frames `[start, start + len)` of the level-1 output are refined.
    /// Upsamplers run at the matching absolute offsets, so the frames
    /// listed in [`SampleRun::exact`] equal those of the full unroll.
    pub fn sample_windowed(
        &mut self,
        labels: &[usize],
        sigma: f64,
        first_frames: usize,
        start: usize,
        len: usize,
        rng: &mut impl Rng,
    ) -> Result<SampleRun> {
        if len == 0 || start + len > first_frames {
            return Err(HvgError::InvalidArgument(format!(
                "window [{start}, {}) does not fit {first_frames} frames",
                start + len
            )));
        }
        let lat = self.latents(labels, sigma, rng);
        let full = self.output_frames(first_frames);
        let first = self.levels[0].generate(Mode::Frozen, &lat[0], None, first_frames, 0)?;
        let mut outputs = vec![first.narrow_frames(start, len)?];
        let mut offsets = vec![start];
        let mut exact = vec![(start, start + len)];
        for k in 1..self.levels.len() {
            let m = &mut self.levels[k];
            let kt = m.config.temporal_factor;
            let off = offsets[k - 1] * kt;
            let y = m.generate(Mode::Frozen, &lat[k], outputs.last(), 0, off)?;
            let (a, b) = exact[k - 1];
            let r = match &m.g {
                Generator::Upsampler(u) => u.temporal_convs(),
                Generator::First(_) => None,
            };
            exact.push(match r {
                Some(r) => {
                    let lo = if a == 0 { 0 } else { a * kt + r };
                    let hi = if b == full[k - 1] { full[k] } else { (b * kt).saturating_sub(r) };
                    (lo, hi.max(lo))
                }
                None => (off, off),
            });
            offsets.push(off);
            outputs.push(y);
        }
        Ok(SampleRun { outputs, offsets, exact, labels: labels.to_vec(), sigma })
    }
}

/// Everything needed to repeat a command: the resolved config, the seed,
/// and the content hashes of the checkpoints it read or wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub args: Vec<String>,
    pub config: crate::config::ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub deterministic: bool,
    pub sigma: Option<f64>,
    /// SHA-256 of each level's `weights.bin`, coarse to fine.
    pub checkpoint_hashes: Vec<String>,
    /// Command-specific values: frame counts, labels, output files.
    pub details: serde_json::Value,
}
