//! Experiment orchestration: training whole hierarchies, scoring them,
//! PSD runs and paired ablations. The `hvg` command line is a thin layer
//! over these.

use std::path::{Path, PathBuf};

use crate::config::{preset, ExperimentConfig};
use crate::data::{read_dataset, synthetic_record, Dataset};
use crate::evaluation::{
    evaluate_generator, finest_view, finest_views, generate_clips, grounding_error, prepare_statistics,
    radial_psd, reference_spec, render_psd_plot, psd_csv, training_output_frames, EvalRequest, ExtractorConfig,
    FeatureExtractor, LengthScores, MetricsReport, PsdCurve, Reference, METRIC_NOTE,
};
use crate::inference::{Hierarchy, StatsOptions};
use crate::model::LevelModel;
use crate::training::{checkpoint_hash, level_dir, train_level, LevelState, StepMetrics, TrainOptions};
use crate::{HvgError, Result, VideoTensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DATA_ENV: &str = "HVG_DATA_DIR";
pub const DEFAULT_PRESET: &str = "desk-3-level";

/// `--config` wins over `--preset`; with neither the canonical preset is used.
pub fn resolve_config(path: Option<&Path>, preset_name: Option<&str>) -> Result<ExperimentConfig> {
    match (path, preset_name) {
        (Some(p), _) => ExperimentConfig::load(p),
        (None, Some(name)) => preset(name),
        (None, None) => preset(DEFAULT_PRESET),
    }
}

/// Dataset directory: the flag, then the config's `data.root`, then
/// `HVG_DATA_DIR`. `None` means the in-memory synthetic dataset.
pub fn data_root(flag: Option<&Path>, exp: &ExperimentConfig) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| exp.data.root.clone())
        .or_else(|| std::env::var_os(DATA_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

pub fn load_dataset(exp: &ExperimentConfig, root: Option<&Path>) -> Result<Dataset> {
    match root {
        Some(r) => Ok(read_dataset(r)?.0),
        None => Dataset::synthetic(&exp.data.synthetic),
    }
}

/// Content hashes of the first `levels` checkpoints under `root`.
pub fn checkpoint_hashes(root: &Path, levels: usize) -> Result<Vec<String>> {
    (0..levels).map(|i| checkpoint_hash(&level_dir(root, i))).collect()
}

/// Trains levels `0..levels` in order, resuming any that are partly done.
pub fn train_hierarchy(
    exp: &ExperimentConfig,
    ds: &Dataset,
    root: &Path,
    levels: usize,
    log: &mut dyn FnMut(usize, &StepMetrics),
) -> Result<()> {
    let opts = TrainOptions { iterations: exp.train.iterations, checkpoint_every: exp.train.checkpoint_every, resume: true };
    for i in 0..levels {
        train_level(i, exp, ds, root, &opts, &mut |m| log(i, m))?;
    }
    Ok(())
}

/// Copies a finished level checkpoint, without its lock or run record.
pub fn copy_level(from: &Path, to: &Path) -> Result<()> {
    std::fs::create_dir_all(to).map_err(|source| HvgError::Io { path: to.to_path_buf(), source })?;
    for f in ["config.json", "weights.bin", "optimizer.bin", "bn_stats.json", "meta.json"] {
        std::fs::copy(from.join(f), to.join(f)).map_err(|source| HvgError::Io { path: from.join(f), source })?;
    }
    Ok(())
}

pub struct TrainedExtractor {
    pub extractor: FeatureExtractor,
    /// On held-out synthetic clips of the training length.
    pub accuracy: f64,
    pub losses: Vec<f64>,
}

/// Minimum held-out accuracy before metric values mean anything.
pub const EXTRACTOR_MIN_ACCURACY: f64 = 0.95;

/// Trains the feature network on the dataset's finest views and measures
/// its accuracy on `held_out` fresh synthetic videos.
pub fn train_extractor(exp: &ExperimentConfig, ds: &Dataset, seed: u64, held_out: usize) -> Result<TrainedExtractor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE87_AC70);
    let views = finest_views(ds, exp)?;
    let len = training_output_frames(exp).min(views.iter().map(|v| v.0.frames()).min().unwrap_or(0));
    let cfg = ExtractorConfig::default();
    let res = exp.levels.last().expect("validated").resolution;
    let mut extractor = FeatureExtractor::new(res, ds.num_classes.max(2), &cfg, &mut rng)?;
    let losses = extractor.train(&views, &[len], exp.eval.extractor_iterations, &cfg, &mut rng)?;
    let spec = reference_spec(exp, len);
    let held: Vec<(VideoTensor, usize)> = (0..held_out)
        .map(|i| {
            let r = synthetic_record(i % spec.classes, spec.seed.wrapping_mul(31).wrapping_add(i as u64), spec.frames, spec.height, spec.width)?;
            Ok((finest_view(&r, exp)?.narrow_frames(0, len)?, r.label))
        })
        .collect::<Result<_>>()?;
    let accuracy = extractor.accuracy(&held)?;
    Ok(TrainedExtractor { extractor, accuracy, losses })
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub request: EvalRequest,
    /// Real videos per length.
    pub reference_videos: usize,
    /// Also score freshly initialised levels.
    pub baseline: bool,
    pub held_out: usize,
}

impl EvalOptions {
    pub fn from_config(exp: &ExperimentConfig) -> Self {
        let request = EvalRequest::from_config(exp);
        Self { reference_videos: request.n_samples, request, baseline: false, held_out: 64 }
    }
}

/// Untrained levels initialised exactly as training initialises them.
pub fn untrained_hierarchy(exp: &ExperimentConfig, classes: usize, levels: usize) -> Result<Hierarchy> {
    let models: Vec<LevelModel> = (0..levels).map(|i| Ok(LevelState::new(exp, i, classes)?.model)).collect::<Result<_>>()?;
    Hierarchy::new(models)
}

fn score(
    h: &mut Hierarchy,
    exp: &ExperimentConfig,
    ds: &Dataset,
    extractor: &mut FeatureExtractor,
    opts: &EvalOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LengthScores>> {
    prepare_statistics(h, &opts.request, rng)?;
    let views;
    let longest = opts.request.lengths.iter().copied().max().unwrap_or(0);
    let shortest_view = ds.videos.iter().map(|r| r.frames / exp.pyramid().iter().map(|f| f.0).product::<usize>()).min();
    // Real data when its videos are long enough, longer synthetic ones otherwise.
    let reference = if shortest_view.is_some_and(|f| f >= longest) && ds.len() >= 2 {
        views = finest_views(ds, exp)?;
        Reference::Clips(&views[..views.len().min(opts.reference_videos)])
    } else {
        Reference::Synthetic { exp, videos: opts.reference_videos }
    };
    evaluate_generator(h, reference, extractor, &opts.request, rng)
}

/// Loads the trained hierarchy under `root` and writes nothing; see the
/// `eval` command for the files.
pub fn evaluate_run(
    exp: &ExperimentConfig,
    root: &Path,
    ds: &Dataset,
    seed: u64,
    opts: &EvalOptions,
    extractor: Option<&mut TrainedExtractor>,
) -> Result<MetricsReport> {
    let levels = exp.levels.len();
    let mut own;
    let ex = match extractor {
        Some(e) => e,
        None => {
            own = train_extractor(exp, ds, seed, opts.held_out)?;
            &mut own
        }
    };
    let mut h = Hierarchy::load(root, levels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE7A1);
    let lengths = score(&mut h, exp, ds, &mut ex.extractor, opts, &mut rng)?;
    let grounding = grounding_error(&mut h, opts.request.n_samples.min(64), opts.request.sigma, opts.request.batch, &mut rng)?;
    let baseline = if opts.baseline {
        let mut u = untrained_hierarchy(exp, h.classes(), levels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBA5E);
        Some(score(&mut u, exp, ds, &mut ex.extractor, opts, &mut rng)?)
    } else {
        None
    };
    Ok(MetricsReport {
        note: METRIC_NOTE.to_string(),
        experiment: exp.name.clone(),
        config_hash: exp.hash(),
        checkpoint_hashes: checkpoint_hashes(root, levels)?,
        seed,
        sigma: opts.request.sigma,
        extractor_accuracy: ex.accuracy,
        lengths,
        grounding_error: grounding,
        baseline,
    })
}

/// PSD of one frame index for data and samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdComparison {
    pub frame: usize,
    pub data: PsdCurve,
    pub generated: PsdCurve,
    /// Fraction of bins where the generated mean lies in the data's
    /// `mean ± 3·std` band.
    pub within_3_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    pub experiment: String,
    pub frames: usize,
    pub samples: usize,
    pub sigma: f64,
    pub checkpoint_hashes: Vec<String>,
    pub curves: Vec<PsdComparison>,
}

/// Frame indices analysed for `frames`-frame clips: the configured ones
/// that exist, plus the last frame.
pub fn psd_frame_indices(exp: &ExperimentConfig, frames: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = exp.eval.psd_frames.iter().copied().filter(|&t| t < frames).collect();
    if frames > 0 && !idx.contains(&(frames - 1)) {
        idx.push(frames - 1);
    }
    idx
}

/// Radial spectra of `n` samples of `frames` frames against as many real
/// clips; writes `psd.csv`, `psd.json` and one plot per frame into `out`.
#[allow(clippy::too_many_arguments)]
pub fn psd_run(
    exp: &ExperimentConfig,
    root: &Path,
    seed: u64,
    frames: usize,
    n: usize,
    sigma: f64,
    stats_passes: usize,
    out: &Path,
) -> Result<PsdReport> {
    let levels = exp.levels.len();
    let mut h = Hierarchy::load(root, levels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x95D);
    let req = EvalRequest {
        n_samples: n,
        sigma,
        lengths: vec![frames],
        stats_passes,
        stats_batch: exp.eval.stats_batch,
        batch: 8,
    };
    prepare_statistics(&mut h, &req, &mut rng)?;
    let (fake, ..) = generate_clips(&mut h, n, frames, sigma, req.batch, &mut rng)?;
    let spec = reference_spec(exp, frames);
    let real: Vec<VideoTensor> = (0..n.max(2))
        .map(|i| {
            let r = synthetic_record(i % spec.classes, spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64), spec.frames, spec.height, spec.width)?;
            finest_view(&r, exp)?.narrow_frames(0, frames)
        })
        .collect::<Result<_>>()?;
    let idx = psd_frame_indices(exp, frames);
    let data = radial_psd(&real, &idx)?;
    let generated = radial_psd(&fake, &idx)?;
    std::fs::create_dir_all(out).map_err(|source| HvgError::Io { path: out.to_path_buf(), source })?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (d, g) in data.iter().zip(&generated) {
        rows.push(("data", d));
        rows.push(("generated", g));
        render_psd_plot(&[d, g], &out.join(format!("psd_frame_{:05}.png", d.frame)))?;
        curves.push(PsdComparison { frame: d.frame, data: d.clone(), generated: g.clone(), within_3_std: d.fraction_within(g, 3.0) });
    }
    let csv = out.join("psd.csv");
    std::fs::write(&csv, psd_csv(&rows)).map_err(|source| HvgError::Io { path: csv, source })?;
    let report = PsdReport {
        experiment: exp.name.clone(),
        frames,
        samples: n,
        sigma,
        checkpoint_hashes: checkpoint_hashes(root, levels)?,
        curves,
    };
    crate::data::write_json(&out.join("psd.json"), &report)?;
    Ok(report)
}

/// The paired configurations compared by an ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Upsampler with and without the matching discriminator.
    MatchingD,
    /// Upsampler trained on 4- and on 2-frame condition windows.
    Window,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::MatchingD => "matching-d",
            Ablation::Window => "window",
        }
    }

    /// `(variant, preset)` pairs; the first is the reference arm.
    pub fn variants(self) -> [(&'static str, &'static str); 2] {
        match self {
            Ablation::MatchingD => [("with-md", "desk-2-level"), ("no-md", "desk-2-level-no-md")],
            Ablation::Window => [("window-4", "desk-2-level"), ("window-2", "desk-2-level-window-2")],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub variant: String,
    pub config: ExperimentConfig,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub note: String,
    pub ablation: String,
    pub seed: u64,
    pub arms: Vec<AblationArm>,
    /// Grounding error of the first upsampler, second arm over first.
    pub grounding_ratio: f64,
    /// `fvd_like` at every evaluated length, per arm.
    pub fvd_like: Vec<Vec<f64>>,
}

/// Settings applied to both arms of an ablation.
#[derive(Clone, Debug)]
pub struct AblationSettings {
    pub seed: u64,
    pub iterations: Option<u64>,
    pub adjust: fn(&mut ExperimentConfig),
}

/// Trains both arms under `out/<variant>/` (level 1 once, shared) and
/// scores them with one feature network.
pub fn run_ablation(
    which: Ablation,
    out: &Path,
    ds_root: Option<&Path>,
    settings: &AblationSettings,
    eval: &dyn Fn(&ExperimentConfig) -> EvalOptions,
    log: &mut dyn FnMut(&str, usize, &StepMetrics),
) -> Result<AblationReport> {
    let mut arms = Vec::new();
    let mut configs = Vec::new();
    for (variant, name) in which.variants() {
        let mut exp = preset(name)?;
        exp.seed = settings.seed;
        if let Some(it) = settings.iterations {
            exp.train.iterations = it;
        }
        (settings.adjust)(&mut exp);
        exp.validate()?;
        configs.push((variant, exp));
    }
    let ds = load_dataset(&configs[0].1, ds_root)?;
    let first_root = out.join(configs[0].0);
    for (k, (variant, exp)) in configs.iter().enumerate() {
        let root = out.join(variant);
        if k > 0 && exp.levels[0] == configs[0].1.levels[0] && !level_dir(&root, 0).join("meta.json").exists() {
            train_hierarchy(&configs[0].1, &ds, &first_root, 1, &mut |i, m| log(configs[0].0, i, m))?;
            copy_level(&level_dir(&first_root, 0), &level_dir(&root, 0))?;
        }
        train_hierarchy(exp, &ds, &root, exp.levels.len(), &mut |i, m| log(variant, i, m))?;
    }
    let mut extractor = train_extractor(&configs[0].1, &ds, settings.seed, eval(&configs[0].1).held_out)?;
    for (variant, exp) in &configs {
        let root = out.join(variant);
        let metrics = evaluate_run(exp, &root, &ds, settings.seed, &eval(exp), Some(&mut extractor))?;
        crate::data::write_json(&root.join("metrics.json"), &metrics)?;
        arms.push(AblationArm { variant: variant.to_string(), config: exp.clone(), metrics });
    }
    let g = |a: &AblationArm| a.metrics.grounding_error.first().copied().unwrap_or(f64::NAN);
    let report = AblationReport {
        note: METRIC_NOTE.to_string(),
        ablation: which.name().to_string(),
        seed: settings.seed,
        grounding_ratio: g(&arms[1]) / g(&arms[0]),
        fvd_like: arms.iter().map(|a| a.metrics.lengths.iter().map(|l| l.fvd_like).collect()).collect(),
        arms,
    };
    crate::data::write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

/// Level-1 frames for `frames` finest-level frames.
pub fn first_frames_for(exp: &ExperimentConfig, frames: usize) -> Result<usize> {
    let kt = exp.temporal_product(exp.levels.len() - 1);
    if frames == 0 || frames % kt != 0 {
        return Err(HvgError::InvalidArgument(format!("--frames {frames} is not a positive multiple of ΠK_T = {kt}")));
    }
    Ok(frames / kt)
}

/// Statistics options for sampling `first` level-1 frames.
pub fn stats_for(exp: &ExperimentConfig, passes: usize, sigma: f64, first: usize) -> StatsOptions {
    StatsOptions { passes, batch: exp.eval.stats_batch, sigma, first_frames: first.max(exp.levels[0].frames) }
}
