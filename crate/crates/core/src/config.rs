//! Experiment and level configuration, presets and validation.
//!
//! Configs are JSON. [`ExperimentConfig::validate`] reports the first
//! violated constraint with the offending field path, e.g.
//! `levels[1].window`.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{HvgError, Result};

/// Recurrent/temporal layer used in each generator unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalUnit {
    ConvGru,
    Separable3d,
}

/// One hierarchy level. Level 1 generates from noise; later levels refine
/// the previous level's output by `(temporal_factor, spatial_factor)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    /// `K_T` relative to the previous level. Ignored on level 1.
    #[serde(default = "one")]
    pub temporal_factor: usize,
    /// `K_S` relative to the previous level. Ignored on level 1.
    #[serde(default = "one")]
    pub spatial_factor: usize,
    /// Level 1: generated frames. Upsampling levels: condition window length
    /// in previous-level frames.
    pub frames: usize,
    /// Output height and width.
    pub resolution: usize,
    pub ch: usize,
    pub multipliers: Vec<usize>,
    pub temporal_unit: TemporalUnit,
    pub d_ch: usize,
    pub d_multipliers: Vec<usize>,
    /// Frames sampled by the spatial discriminator.
    #[serde(default = "eight")]
    pub spatial_frames: usize,
    #[serde(default = "yes")]
    pub matching_d: bool,
    #[serde(default = "yes")]
    pub class_conditional: bool,
    #[serde(default = "one_two_eight")]
    pub noise_dim: usize,
    #[serde(default = "one_two_eight")]
    pub embed_dim: usize,
}

fn one() -> usize {
    1
}
fn eight() -> usize {
    8
}
fn one_two_eight() -> usize {
    128
}
fn yes() -> bool {
    true
}

impl LevelConfig {
    /// Frames produced per training example: `frames` on level 1, the
    /// window times `K_T` on upsampling levels.
    pub fn output_frames(&self, index: usize) -> usize {
        if index == 0 {
            self.frames
        } else {
            self.frames * self.temporal_factor
        }
    }

    /// Resolution of the first generator unit:
    /// `resolution / 2^(units − 1)`.
    pub fn base_resolution(&self) -> usize {
        self.resolution >> self.multipliers.len().saturating_sub(1)
    }

    /// Condition resolution of an upsampling level.
    pub fn condition_resolution(&self) -> usize {
        self.resolution / self.spatial_factor.max(1)
    }

    /// `[embed(y) ∥ z]` width, or `noise_dim` alone when unconditional.
    pub fn cond_dim(&self) -> usize {
        self.noise_dim + if self.class_conditional { self.embed_dim } else { 0 }
    }
}

/// Adam hyper-parameters and the D/G update ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub d_steps_per_g: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr_g: 1e-4, lr_d: 5e-4, beta1: 0.0, beta2: 0.999, eps: 1e-8, d_steps_per_g: 2, batch_size: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Generator updates per level.
    pub iterations: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 2000, checkpoint_every: 250, log_every: 25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_samples: usize,
    /// Noise standard deviation for metrics and statistic recomputation.
    pub sigma: f64,
    /// Noise standard deviation for emitted samples.
    pub sample_sigma: f64,
    pub stats_passes: usize,
    pub stats_batch: usize,
    /// Multiples of the training length at which metrics are reported.
    pub unroll_factors: Vec<usize>,
    pub extractor_iterations: usize,
    /// Frame indices (0-based) of the PSD curves.
    pub psd_frames: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 256,
            sigma: 1.0,
            sample_sigma: 0.5,
            stats_passes: 200,
            stats_batch: 8,
            unroll_factors: vec![1, 2],
            extractor_iterations: 400,
            psd_frames: vec![0, 9, 23, 47],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; `None` falls back to `HVG_DATA_DIR`, then to an
    /// in-memory synthetic dataset.
    #[serde(default)]
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    /// `(K_T, K_S)` from the dataset to the top level's view.
    #[serde(default = "unit_factor")]
    pub top_factor: (usize, usize),
}

fn unit_factor() -> (usize, usize) {
    (1, 1)
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { root: None, synthetic: SyntheticSpec::default(), top_factor: (1, 1) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub data: DataConfig,
    pub levels: Vec<LevelConfig>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub seed: u64,
    /// Preset only meaningful for `--shapes-only` dry runs.
    #[serde(default)]
    pub shapes_only: bool,
}

fn cfg_err(path: impl Into<String>, message: impl Into<String>) -> HvgError {
    HvgError::Config { path: path.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::error::io_err(path))?;
        Self::from_json(&text)
    }

    /// Parses and validates. Errors carry the path of the offending field,
    /// `.` for the document itself.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = format!("{inner} (line {}, column {})", inner.line(), inner.column());
            cfg_err(path, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// JSON Schema (draft 2020-12) of the config format.
    pub fn json_schema() -> String {
        serde_json::to_string_pretty(&schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// Pyramid factors coarse to fine: one entry per upsampling level, plus
    /// the top factor when it is not `(1, 1)`.
    pub fn pyramid(&self) -> Vec<(usize, usize)> {
        let mut f: Vec<_> = self.levels.iter().skip(1).map(|l| (l.temporal_factor, l.spatial_factor)).collect();
        if self.data.top_factor != (1, 1) {
            f.push(self.data.top_factor);
        }
        f
    }

    /// Total temporal factor from level 1 to level `upto` (0-based, inclusive).
    pub fn temporal_product(&self, upto: usize) -> usize {
        self.levels.iter().take(upto + 1).skip(1).map(|l| l.temporal_factor).product()
    }

    /// Full-length output frames of every level when level 1 generates
    /// `t1` frames and nothing is cropped.
    pub fn unrolled_frames(&self, t1: usize) -> Vec<usize> {
        (0..self.levels.len()).map(|i| t1 * self.temporal_product(i)).collect()
    }

    /// Frames of the previous level's output an upsampling level sees
    /// while its predecessors sample conditions during training.
    pub fn condition_source_frames(&self, index: usize) -> usize {
        self.levels[index - 1].output_frames(index - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(cfg_err("levels", "at least one level is required"));
        }
        for (i, l) in self.levels.iter().enumerate() {
            validate_level(i, l, if i == 0 { None } else { Some((&self.levels[i - 1], self.condition_source_frames(i))) })?;
        }
        let o = &self.optimizer;
        for (name, v) in [("lr_g", o.lr_g), ("lr_d", o.lr_d)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(cfg_err(format!("optimizer.{name}"), "learning rate must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(cfg_err("optimizer.beta1", "Adam betas must lie in [0, 1)"));
        }
        if !(o.eps > 0.0) {
            return Err(cfg_err("optimizer.eps", "must be positive"));
        }
        if o.d_steps_per_g == 0 {
            return Err(cfg_err("optimizer.d_steps_per_g", "must be at least 1"));
        }
        if o.batch_size == 0 {
            return Err(cfg_err("optimizer.batch_size", "must be at least 1"));
        }
        let e = &self.eval;
        if !(e.sigma > 0.0) || !(e.sample_sigma > 0.0) {
            return Err(cfg_err("eval.sigma", "noise standard deviations must be positive"));
        }
        if e.unroll_factors.is_empty() || e.unroll_factors.contains(&0) {
            return Err(cfg_err("eval.unroll_factors", "need at least one positive factor"));
        }
        if e.stats_batch == 0 {
            return Err(cfg_err("eval.stats_batch", "must be at least 1"));
        }
        let (kt, ks) = self.data.top_factor;
        if kt == 0 || ks == 0 {
            return Err(cfg_err("data.top_factor", "factors must be positive"));
        }
        if self.shapes_only {
            return Ok(());
        }
        let s = &self.data.synthetic;
        let top = self.levels.last().expect("non-empty");
        if top.resolution * ks != s.height || top.resolution * ks != s.width {
            return Err(cfg_err(
                "data.synthetic.height",
                format!(
                    "top level resolution {} × top factor {ks} does not match dataset {}x{}",
                    top.resolution, s.height, s.width
                ),
            ));
        }
        let total_kt = self.temporal_product(self.levels.len() - 1) * kt;
        if s.frames / total_kt != self.levels[0].frames {
            return Err(cfg_err(
                "levels[0].frames",
                format!(
                    "dataset videos of {} frames give {} coarse frames under a total temporal factor of {total_kt}",
                    s.frames,
                    s.frames / total_kt
                ),
            ));
        }
        if s.classes == 0 {
            return Err(cfg_err("data.synthetic.classes", "must be positive"));
        }
        Ok(())
    }
}

fn validate_level(i: usize, l: &LevelConfig, prev: Option<(&LevelConfig, usize)>) -> Result<()> {
    let p = |f: &str| format!("levels[{i}].{f}");
    if l.frames == 0 {
        return Err(cfg_err(p("frames"), "must be at least 1"));
    }
    if l.multipliers.is_empty() || l.multipliers.contains(&0) {
        return Err(cfg_err(p("multipliers"), "need one positive multiplier per unit"));
    }
    if l.d_multipliers.is_empty() || l.d_multipliers.contains(&0) {
        return Err(cfg_err(p("d_multipliers"), "need one positive multiplier per block"));
    }
    if l.ch == 0 || l.d_ch == 0 {
        return Err(cfg_err(p("ch"), "channel bases must be positive"));
    }
    if l.noise_dim == 0 {
        return Err(cfg_err(p("noise_dim"), "must be positive"));
    }
    if l.spatial_frames == 0 || l.spatial_frames > l.output_frames(i) {
        return Err(cfg_err(
            p("spatial_frames"),
            format!("must lie in 1..={} (frames per training example)", l.output_frames(i)),
        ));
    }
    let units = l.multipliers.len();
    match prev {
        None => {
            if l.resolution != 4 << (units - 1) {
                return Err(cfg_err(
                    p("multipliers"),
                    format!("{units} units produce {}x{}, not {}", 4 << (units - 1), 4 << (units - 1), l.resolution),
                ));
            }
            if l.matching_d {
                return Err(cfg_err(p("matching_d"), "level 1 has no condition to match"));
            }
        }
        Some((prev, source_frames)) => {
            if l.temporal_factor == 0 || l.spatial_factor == 0 {
                return Err(cfg_err(p("temporal_factor"), "factors must be positive"));
            }
            if l.resolution != prev.resolution * l.spatial_factor {
                return Err(cfg_err(
                    p("resolution"),
                    format!("expected {} × {} = {}", prev.resolution, l.spatial_factor, prev.resolution * l.spatial_factor),
                ));
            }
            if l.frames > source_frames {
                return Err(cfg_err(
                    p("frames"),
                    format!("window of {} frames exceeds the {source_frames} frames the previous level produces", l.frames),
                ));
            }
            let base = l.base_resolution();
            if base == 0 || base << (units - 1) != l.resolution {
                return Err(cfg_err(p("multipliers"), format!("{units} units cannot reach {}", l.resolution)));
            }
            if base > l.condition_resolution() {
                return Err(cfg_err(
                    p("multipliers"),
                    format!("first unit resolution {base} exceeds the condition resolution {}", l.condition_resolution()),
                ));
            }
        }
    }
    Ok(())
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 7] = [
    "desk-3-level",
    "desk-2-level",
    "desk-2-level-no-md",
    "desk-2-level-window-2",
    "paper-Kinetics-2-level",
    "paper-BDD-3-level",
    "smoke",
];

#[allow(clippy::too_many_arguments)]
fn level(
    kt: usize,
    ks: usize,
    frames: usize,
    resolution: usize,
    ch: usize,
    multipliers: &[usize],
    unit: TemporalUnit,
    d_ch: usize,
    d_multipliers: &[usize],
    matching_d: bool,
) -> LevelConfig {
    LevelConfig {
        temporal_factor: kt,
        spatial_factor: ks,
        frames,
        resolution,
        ch,
        multipliers: multipliers.to_vec(),
        temporal_unit: unit,
        d_ch,
        d_multipliers: d_multipliers.to_vec(),
        spatial_frames: 8,
        matching_d,
        class_conditional: true,
        noise_dim: 128,
        embed_dim: 128,
    }
}

/// Desk levels sample 4 frames for the spatial discriminator: half the
/// level-1 clip, and still valid when the scaling sweep shortens it to 6.
fn desk_levels() -> Vec<LevelConfig> {
    use TemporalUnit::*;
    let mut levels = vec![
        level(1, 1, 8, 8, 32, &[8, 4], ConvGru, 24, &[1, 2, 4], false),
        level(2, 2, 4, 16, 32, &[4, 2, 1], Separable3d, 24, &[1, 2, 4, 4], true),
        level(2, 2, 4, 32, 32, &[4, 2, 1], Separable3d, 24, &[1, 2, 4, 8, 8], true),
    ];
    for l in &mut levels {
        l.spatial_frames = 4;
    }
    levels
}

/// Built-in configurations; see [`PRESETS`].
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    use TemporalUnit::*;
    let base = |name: &str, levels: Vec<LevelConfig>| ExperimentConfig {
        name: name.to_string(),
        data: DataConfig::default(),
        levels,
        optimizer: OptimizerConfig::default(),
        train: TrainConfig::default(),
        eval: EvalConfig::default(),
        seed: 0,
        shapes_only: false,
    };
    let cfg = match name {
        "desk-3-level" => base(name, desk_levels()),
        "desk-2-level" | "desk-2-level-no-md" | "desk-2-level-window-2" => {
            let mut c = base(name, desk_levels()[..2].to_vec());
            c.data.top_factor = (2, 2);
            if name.ends_with("no-md") {
                c.levels[1].matching_d = false;
            }
            if name.ends_with("window-2") {
                c.levels[1].frames = 2;
            }
            c
        }
        "paper-Kinetics-2-level" => {
            let mut c = base(
                name,
                vec![
                    level(1, 1, 24, 32, 128, &[8, 8, 4, 2], ConvGru, 128, &[16, 16, 8, 4, 2], false),
                    level(2, 4, 6, 128, 128, &[8, 8, 4, 2, 1], Separable3d, 96, &[1, 2, 4, 8, 16, 16], true),
                ],
            );
            c.data.synthetic.classes = 6;
            c.shapes_only = true;
            c
        }
        "paper-BDD-3-level" => {
            let mut levels = vec![
                level(1, 1, 12, 64, 128, &[8, 8, 4, 2, 1], ConvGru, 128, &[16, 16, 8, 4, 2, 1], false),
                level(2, 2, 6, 128, 96, &[8, 8, 4, 2, 1], Separable3d, 96, &[1, 2, 4, 8, 16, 16], true),
                level(2, 2, 6, 256, 96, &[8, 4, 4, 4, 2, 1], Separable3d, 96, &[1, 2, 4, 8, 8, 16, 16], true),
            ];
            for l in &mut levels {
                l.class_conditional = false;
            }
            let mut c = base(name, levels);
            c.shapes_only = true;
            c
        }
        "smoke" => {
            // 4/8x8 -> 8/16x16 at a few channels: the whole pipeline in seconds
            let mut first = level(1, 1, 4, 8, 2, &[2, 1], ConvGru, 2, &[1, 2], false);
            let mut up = level(2, 2, 3, 16, 2, &[2, 1, 1], Separable3d, 2, &[1, 2, 2], true);
            for l in [&mut first, &mut up] {
                l.spatial_frames = 2;
                l.noise_dim = 4;
                l.embed_dim = 3;
            }
            let mut c = base(name, vec![first, up]);
            c.data.synthetic = crate::data::SyntheticSpec { videos: 12, frames: 8, height: 16, width: 16, classes: 3, seed: 5 };
            c.data.top_factor = (1, 1);
            c.optimizer.batch_size = 2;
            c.train = TrainConfig { iterations: 3, checkpoint_every: 2, log_every: 1 };
            c.eval.n_samples = 6;
            c.eval.stats_passes = 2;
            c.eval.stats_batch = 2;
            c.eval.extractor_iterations = 20;
            c.eval.psd_frames = vec![0, 5];
            c.seed = 11;
            c
        }
        _ => {
            return Err(cfg_err("preset", format!("unknown preset `{name}`; known: {}", PRESETS.join(", "))));
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
