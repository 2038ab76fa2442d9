//! Sample-quality metrics, spectra and activation accounting.
//!
//! The Fréchet and inception metrics use a small classifier trained on the
//! labelled training data as feature network. Their values rank models
//! trained on the same data; they mean nothing on an absolute scale and
//! cannot be compared with numbers computed with other feature networks.

pub mod accounting;
pub mod extractor;
pub mod metrics;
pub mod psd;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use accounting::{activation_accounting, dry_run_shapes, end_to_end_config, scaling_csv, Accounting, LevelActivations};
pub use extractor::{random_crop, ExtractorConfig, FeatureExtractor, Features};
pub use metrics::{frechet_distance, inception_score, softmax_rows, GaussianStats};
pub use psd::{psd_csv, radial_psd, render_psd_plot, PsdCurve};

use crate::config::ExperimentConfig;
use crate::data::{synthetic_record, Dataset, SyntheticSpec, VideoRecord};
use crate::error::{HvgError, Result};
use crate::inference::{balanced_labels, Hierarchy, StatsOptions};
use crate::video::{build_pyramid, VideoTensor};

/// Printed into every metrics report.
pub const METRIC_NOTE: &str = "fid_like, fvd_like and is_score use a small classifier trained on this \
dataset as feature network; they rank models on the same data and are not comparable to scores \
computed with any other network";

/// Finest pyramid view of one dataset video.
pub fn finest_view(r: &VideoRecord, exp: &ExperimentConfig) -> Result<VideoTensor> {
    let pyr = exp.pyramid();
    let need: usize = pyr.iter().map(|f| f.0).product();
    let usable = r.frames / need * need;
    let v = r.to_video().narrow_frames(0, usable)?;
    Ok(build_pyramid(&v, &pyr)?.views[exp.levels.len() - 1].clone())
}

/// Finest pyramid view of every video, with its label.
pub fn finest_views(ds: &Dataset, exp: &ExperimentConfig) -> Result<Vec<(VideoTensor, usize)>> {
    ds.videos.iter().map(|r| Ok((finest_view(r, exp)?, r.label))).collect()
}

/// Synthetic reference videos long enough to hold `frames` finest-level
/// frames: the training spec with proportionally longer videos and a
/// different seed.
pub fn reference_spec(exp: &ExperimentConfig, frames: usize) -> SyntheticSpec {
    let s = &exp.data.synthetic;
    let train_frames = exp.unrolled_frames(exp.levels[0].frames).last().copied().unwrap_or(1);
    let factor = frames.div_ceil(train_frames).max(1);
    SyntheticSpec { frames: s.frames * factor, seed: s.seed.wrapping_add(7_919), ..s.clone() }
}

/// Real clips generated samples are compared against.
#[derive(Clone, Copy, Debug)]
pub enum Reference<'a> {
    /// Random contiguous crops of these finest-view videos.
    Clips(&'a [(VideoTensor, usize)]),
    /// `videos` videos of [`reference_spec`], rendered one at a time.
    Synthetic { exp: &'a ExperimentConfig, videos: usize },
}

impl Reference<'_> {
    /// Features and labels of real clips of `frames` finest-level frames.
    pub fn features(&self, frames: usize, extractor: &mut FeatureExtractor, rng: &mut impl Rng) -> Result<(Features, Vec<usize>)> {
        let mut out = Features { penultimate: Vec::new(), logits: Vec::new() };
        let mut labels = Vec::new();
        let mut push = |v: &VideoTensor, y: usize, out: &mut Features| -> Result<()> {
            let f = extractor.features(&random_crop(v, frames, rng)?)?;
            out.penultimate.extend(f.penultimate);
            out.logits.extend(f.logits);
            labels.push(y);
            Ok(())
        };
        match *self {
            Reference::Clips(clips) => {
                for (v, y) in clips {
                    push(v, *y, &mut out)?;
                }
            }
            Reference::Synthetic { exp, videos } => {
                let spec = reference_spec(exp, frames);
                for i in 0..videos {
                    let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                    let r = synthetic_record(i % spec.classes, seed, spec.frames, spec.height, spec.width)?;
                    push(&finest_view(&r, exp)?, r.label, &mut out)?;
                }
            }
        }
        if labels.len() < 2 {
            return Err(HvgError::InvalidArgument("metrics need at least 2 reference videos".into()));
        }
        Ok((out, labels))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: usize,
    pub fid_like: Option<f64>,
    pub is_score: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthScores {
    /// Finest-level frames per clip.
    pub frames: usize,
    /// Level-1 frames that were refined.
    pub first_frames: usize,
    /// Whether a window of the level-1 output was refined rather than all of it.
    pub windowed: bool,
    pub fid_like: f64,
    pub fvd_like: f64,
    pub is_score: f64,
    pub real_is_score: f64,
    pub per_class: Vec<ClassScores>,
}

#[derive(Clone, Debug)]
pub struct EvalRequest {
    pub n_samples: usize,
    pub sigma: f64,
    /// Finest-level clip lengths.
    pub lengths: Vec<usize>,
    pub stats_passes: usize,
    pub stats_batch: usize,
    pub batch: usize,
}

impl EvalRequest {
    /// Lengths `u × (training output length)` for the configured unroll
    /// factors `u`.
    pub fn from_config(exp: &ExperimentConfig) -> Self {
        let base = training_output_frames(exp);
        Self {
            n_samples: exp.eval.n_samples,
            sigma: exp.eval.sigma,
            lengths: exp.eval.unroll_factors.iter().map(|u| u * base).collect(),
            stats_passes: exp.eval.stats_passes,
            stats_batch: exp.eval.stats_batch,
            batch: 8,
        }
    }
}

/// Frames the finest level outputs per training example.
pub fn training_output_frames(exp: &ExperimentConfig) -> usize {
    let i = exp.levels.len() - 1;
    exp.levels[i].output_frames(i)
}

/// Finest-level clips of `frames` frames: a contiguous window of the
/// level-1 output when that is shorter than level 1's own length,
/// otherwise a full unroll from a longer level-1 video.
pub fn generate_clips(
    h: &mut Hierarchy,
    n: usize,
    frames: usize,
    sigma: f64,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<VideoTensor>, Vec<usize>, usize, bool)> {
    let kt: usize = h.levels.iter().skip(1).map(|l| l.config.temporal_factor).product();
    if frames == 0 || frames % kt != 0 {
        return Err(HvgError::InvalidArgument(format!("{frames} frames are not a multiple of ΠK_T = {kt}")));
    }
    let first = frames / kt;
    let t1 = h.levels[0].config.frames;
    let labels = balanced_labels(n, h.classes());
    let mut clips = Vec::with_capacity(n);
    for chunk in labels.chunks(batch.max(1)) {
        let run = if first < t1 {
            let start = rng.random_range(0..=t1 - first);
            h.sample_windowed(chunk, sigma, t1, start, first, rng)?
        } else {
            h.sample(chunk, sigma, first, rng)?
        };
        let v = run.finest();
        clips.extend((0..chunk.len()).map(|b| v.select_batch(&[b])));
    }
    Ok((clips, labels, first, first < t1))
}

/// Like [`generate_clips`] but keeps only the extractor features of each
/// generated chunk.
pub fn generated_features(
    h: &mut Hierarchy,
    extractor: &mut FeatureExtractor,
    n: usize,
    frames: usize,
    sigma: f64,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<(Features, Vec<usize>, usize, bool)> {
    let kt: usize = h.levels.iter().skip(1).map(|l| l.config.temporal_factor).product();
    if frames == 0 || frames % kt != 0 {
        return Err(HvgError::InvalidArgument(format!("{frames} frames are not a multiple of ΠK_T = {kt}")));
    }
    let first = frames / kt;
    let t1 = h.levels[0].config.frames;
    let labels = balanced_labels(n, h.classes());
    let mut out = Features { penultimate: Vec::with_capacity(n), logits: Vec::with_capacity(n) };
    for chunk in labels.chunks(batch.max(1)) {
        let run = if first < t1 {
            let start = rng.random_range(0..=t1 - first);
            h.sample_windowed(chunk, sigma, t1, start, first, rng)?
        } else {
            h.sample(chunk, sigma, first, rng)?
        };
        let f = extractor.features(run.finest())?;
        out.penultimate.extend(f.penultimate);
        out.logits.extend(f.logits);
    }
    Ok((out, labels, first, first < t1))
}

/// Recomputes statistics long enough for every requested length.
pub fn prepare_statistics(h: &mut Hierarchy, req: &EvalRequest, rng: &mut impl Rng) -> Result<()> {
    let kt: usize = h.levels.iter().skip(1).map(|l| l.config.temporal_factor).product();
    let longest = req.lengths.iter().map(|l| l / kt).max().unwrap_or(0).max(h.levels[0].config.frames);
    h.recompute_bn_stats(
        &StatsOptions { passes: req.stats_passes, batch: req.stats_batch, sigma: req.sigma, first_frames: longest },
        rng,
    )
}

/// `(fid_like, fvd_like, is_score, real_is_score, per_class)` of generated
/// against real features. `fid_like` uses the penultimate features,
/// `fvd_like` the logits.
pub type Comparison = (f64, f64, f64, f64, Vec<ClassScores>);

pub fn compare_features(
    fake: &Features,
    fake_labels: &[usize],
    real: &Features,
    real_labels: &[usize],
    classes: usize,
    conditional: bool,
) -> Result<Comparison> {
    let g = GaussianStats::from_features;
    let fid = frechet_distance(&g(&fake.penultimate)?, &g(&real.penultimate)?)?;
    let fvd = frechet_distance(&g(&fake.logits)?, &g(&real.logits)?)?;
    let is = inception_score(&softmax_rows(&fake.logits))?;
    let real_is = inception_score(&softmax_rows(&real.logits))?;
    let mut per_class = Vec::new();
    if conditional {
        let pick = |f: &[Vec<f64>], idx: &[usize]| idx.iter().map(|&i| f[i].clone()).collect::<Vec<_>>();
        for c in 0..classes {
            let fi: Vec<usize> = (0..fake_labels.len()).filter(|&i| fake_labels[i] == c).collect();
            if fi.is_empty() {
                continue;
            }
            let ri: Vec<usize> = (0..real_labels.len()).filter(|&i| real_labels[i] == c).collect();
            let fid_c = if fi.len() >= 2 && ri.len() >= 2 {
                Some(frechet_distance(&g(&pick(&fake.penultimate, &fi))?, &g(&pick(&real.penultimate, &ri))?)?)
            } else {
                None
            };
            let is_c = inception_score(&softmax_rows(&pick(&fake.logits, &fi)))?;
            per_class.push(ClassScores { label: c, fid_like: fid_c, is_score: is_c, samples: fi.len() });
        }
    }
    Ok((fid, fvd, is, real_is, per_class))
}

/// [`compare_features`] on clips.
pub fn compare_clips(
    extractor: &mut FeatureExtractor,
    fake: &[VideoTensor],
    fake_labels: &[usize],
    real: &[(VideoTensor, usize)],
    conditional: bool,
) -> Result<Comparison> {
    let ff = extractor.features_of(fake)?;
    let rv: Vec<VideoTensor> = real.iter().map(|(v, _)| v.clone()).collect();
    let rf = extractor.features_of(&rv)?;
    let rl: Vec<usize> = real.iter().map(|r| r.1).collect();
    compare_features(&ff, fake_labels, &rf, &rl, extractor.classes, conditional)
}

/// Metrics of `h` at every requested length against `reference`.
/// Statistics must already cover the longest length, see
/// [`prepare_statistics`].
pub fn evaluate_generator(
    h: &mut Hierarchy,
    reference: Reference<'_>,
    extractor: &mut FeatureExtractor,
    req: &EvalRequest,
    rng: &mut impl Rng,
) -> Result<Vec<LengthScores>> {
    if req.n_samples < 2 {
        return Err(HvgError::InvalidArgument("metrics need at least 2 generated samples".into()));
    }
    let conditional = h.levels[0].config.class_conditional;
    req.lengths
        .iter()
        .map(|&frames| {
            let (rf, rl) = reference.features(frames, extractor, rng)?;
            let (ff, fl, first_frames, windowed) =
                generated_features(h, extractor, req.n_samples, frames, req.sigma, req.batch, rng)?;
            let (fid_like, fvd_like, is_score, real_is_score, per_class) =
                compare_features(&ff, &fl, &rf, &rl, extractor.classes, conditional)?;
            Ok(LengthScores { frames, first_frames, windowed, fid_like, fvd_like, is_score, real_is_score, per_class })
        })
        .collect()
}

/// `E‖f_s(f_t(x̂^l)) − x̂^{l−1}‖²` per upsampling level (mean over
/// elements), from full unrolls at level 1's training length.
pub fn grounding_error(h: &mut Hierarchy, n: usize, sigma: f64, batch: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let t1 = h.levels[0].config.frames;
    let labels = balanced_labels(n, h.classes());
    let mut sums = vec![0.0; h.levels.len().saturating_sub(1)];
    let mut counts = vec![0usize; sums.len()];
    for chunk in labels.chunks(batch.max(1)) {
        let run = h.sample(chunk, sigma, t1, rng)?;
        for l in 1..h.levels.len() {
            let cfg = &h.levels[l].config;
            let idx = crate::video::temporal_indices(run.outputs[l].frames(), cfg.temporal_factor, 0)?;
            let reduced = run.outputs[l].tensor().index_select(1, &idx).avg_pool(cfg.spatial_factor);
            let cond = run.outputs[l - 1].tensor();
            sums[l - 1] += reduced.sub(cond).data().iter().map(|d| d * d).sum::<f64>();
            counts[l - 1] += cond.numel();
        }
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s / c.max(1) as f64).collect())
}

/// Everything `eval` writes to `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub note: String,
    pub experiment: String,
    pub config_hash: String,
    pub checkpoint_hashes: Vec<String>,
    pub seed: u64,
    pub sigma: f64,
    pub extractor_accuracy: f64,
    pub lengths: Vec<LengthScores>,
    /// Per upsampling level.
    pub grounding_error: Vec<f64>,
    /// The same lengths scored for freshly initialised levels.
    pub baseline: Option<Vec<LengthScores>>,
}
