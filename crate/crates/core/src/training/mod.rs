//! Hinge objectives, Adam, and the greedy level-by-level trainer.
//!
//! Level 1 is trained on whole coarse clips. An upsampling level is trained
//! on temporal crops: real pairs come from the data pyramid, fake
//! conditions are sampled from the already trained (frozen) levels below,
//! cropped to the level's window, and refined by the level's generator.
//! Nothing is back-propagated into frozen levels.

mod checkpoint;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hvg_tensor::{Gradients, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_exists, checkpoint_hash, level_dir, load_level, load_model, read_named_tensors, save_level, write_named_tensors,
    CheckpointConfig, CheckpointLock, CheckpointMeta, NamedTensor, WEIGHTS_MAGIC,
};

use crate::config::{ExperimentConfig, OptimizerConfig};
use crate::data::{sample_training_batch, BatchSpec, Dataset, TrainingBatch};
use crate::error::{HvgError, Result};
use crate::layers::{Fwd, Mode, Module};
use crate::model::LevelModel;
use crate::video::VideoTensor;

/// `mean(max(0, 1 − real)) + mean(max(0, 1 + fake))` over samples and
/// outputs.
pub fn d_hinge_loss(tape: &mut Tape, real: Var, fake: Var) -> Var {
    let r = tape.scale(real, -1.0);
    let r = tape.offset(r, 1.0);
    let r = tape.relu(r);
    let r = tape.mean_all(r);
    let f = tape.offset(fake, 1.0);
    let f = tape.relu(f);
    let f = tape.mean_all(f);
    tape.add(r, f)
}

/// `−mean(fake)` over samples and outputs.
pub fn g_hinge_loss(tape: &mut Tape, fake: Var) -> Var {
    let m = tape.mean_all(fake);
    tape.scale(m, -1.0)
}

/// Adam keyed by parameter path, so state survives rebuilding a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, cfg: &OptimizerConfig) -> Self {
        Self { lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One bias-corrected update of every parameter of `module` that has a
    /// gradient in `grads`.
    pub fn update(&mut self, module: &mut dyn Module, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        let (ms, vs) = (&mut self.m, &mut self.v);
        module.for_each_param(&mut |name, p| {
            let Some(g) = grads.param(p) else { return };
            let m = ms.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = vs.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
            let (md, vd, pd) = (m.data_mut(), v.data_mut(), p.value.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = b1 * md[i] + (1.0 - b1) * gi;
                vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                pd[i] -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + eps);
            }
        });
    }
}

/// Losses of one generator update and the discriminator updates before it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub iteration: u64,
    /// Mean discriminator loss over the discriminator updates of the step.
    pub d_loss: f64,
    pub g_loss: f64,
    pub real_score: f64,
    pub fake_score: f64,
}

/// Everything that changes while a level trains.
#[derive(Clone, Debug)]
pub struct LevelState {
    pub model: LevelModel,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub rng: ChaCha8Rng,
    pub seed: u64,
    /// Completed generator updates.
    pub iteration: u64,
    pub d_updates: u64,
    pub g_updates: u64,
    pub history: Vec<StepMetrics>,
    /// Real batch of the most recent discriminator update, kept for the
    /// failure dump.
    pub last_real: Option<VideoTensor>,
}

/// Seed of level `index` derived from the experiment seed.
pub fn level_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(index as u64 + 1)
}

impl LevelState {
    pub fn new(exp: &ExperimentConfig, index: usize, classes: usize) -> Result<Self> {
        let seed = level_seed(exp.seed, index);
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let model = LevelModel::new(index, &exp.levels[index], classes, &mut init)?;
        Ok(Self {
            model,
            opt_g: Adam::new(exp.optimizer.lr_g, &exp.optimizer),
            opt_d: Adam::new(exp.optimizer.lr_d, &exp.optimizer),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_7EA1),
            seed,
            iteration: 0,
            d_updates: 0,
            g_updates: 0,
            history: Vec::new(),
            last_real: None,
        })
    }
}

/// Trained levels below the one being trained, used only to sample
/// conditions.
#[derive(Clone, Debug, Default)]
pub struct FrozenHierarchy {
    pub levels: Vec<LevelModel>,
}

fn random_windows(v: &VideoTensor, len: usize, rng: &mut impl Rng) -> Result<VideoTensor> {
    let t = v.frames();
    if len == 0 || len > t {
        return Err(HvgError::Shape(format!("cannot crop {len} frames from {t}")));
    }
    let parts = (0..v.dims().batch)
        .map(|b| v.select_batch(&[b]).narrow_frames(rng.random_range(0..=t - len), len))
        .collect::<Result<Vec<_>>>()?;
    VideoTensor::concat_batch(&parts.iter().collect::<Vec<_>>())
}

impl FrozenHierarchy {
    /// `x̂^{l−1}` windows of `window` frames: level 1 generates its training
    /// length and every further frozen level refines a random window of its
    /// own training length. All levels run with frozen statistics.
    pub fn sample_condition(&mut self, labels: &[usize], sigma: f64, window: usize, rng: &mut impl Rng) -> Result<VideoTensor> {
        if self.levels.is_empty() {
            return Err(HvgError::InvalidArgument("no frozen levels to sample conditions from".into()));
        }
        let b = labels.len();
        let mut cur: Option<VideoTensor> = None;
        for m in &mut self.levels {
            let lat = m.latent(b, sigma, labels, rng);
            cur = Some(match cur {
                None => m.generate(Mode::Frozen, &lat, None, m.config.frames, 0)?,
                Some(prev) => {
                    let c = random_windows(&prev, m.config.frames, rng)?;
                    m.generate(Mode::Frozen, &lat, Some(&c), 0, 0)?
                }
            });
        }
        random_windows(&cur.expect("non-empty"), window, rng)
    }

    pub fn param_snapshot(&mut self) -> Vec<(String, Tensor)> {
        self.levels.iter_mut().flat_map(|m| m.param_values()).collect()
    }
}

fn check_finite(iteration: u64, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(HvgError::NonFiniteLoss { iteration, detail: format!("{what} = {v}") })
    }
}

fn batch_spec(exp: &ExperimentConfig, index: usize) -> BatchSpec {
    BatchSpec {
        pyramid: exp.pyramid(),
        level: index + 1,
        window: (index > 0).then(|| exp.levels[index].frames),
    }
}

fn fake_labels(classes: usize, b: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..b).map(|_| rng.random_range(0..classes)).collect()
}

/// Fake sample and its condition, generated without gradients.
fn sample_fake(
    state: &mut LevelState,
    frozen: &mut FrozenHierarchy,
    labels: &[usize],
) -> Result<(VideoTensor, Option<VideoTensor>)> {
    let m = &mut state.model;
    let cond = if m.is_first() {
        None
    } else {
        Some(frozen.sample_condition(labels, 1.0, m.config.frames, &mut state.rng)?)
    };
    let lat = m.latent(labels.len(), 1.0, labels, &mut state.rng);
    let x = m.generate(Mode::Train, &lat, cond.as_ref(), m.config.frames, 0)?;
    Ok((x, cond))
}

/// One discriminator update on a fresh real batch and fresh fakes.
/// Returns `(loss, mean real score, mean fake score)`.
fn d_update(state: &mut LevelState, frozen: &mut FrozenHierarchy, ds: &Dataset, exp: &ExperimentConfig) -> Result<(f64, f64, f64)> {
    let bsz = exp.optimizer.batch_size;
    let batch = sample_training_batch(ds, &batch_spec(exp, state.model.index), bsz, &mut state.rng)?;
    let (real_x, real_c) = match &batch {
        TrainingBatch::First { x, .. } => (x.clone(), None),
        TrainingBatch::Pair { low, high, .. } => (high.clone(), Some(low.clone())),
    };
    let real_labels = batch.labels().to_vec();
    let labels_f = fake_labels(state.model.classes, bsz, &mut state.rng);
    let (fake_x, fake_c) = sample_fake(state, frozen, &labels_f)?;
    state.last_real = Some(real_x.clone());

    let x = VideoTensor::concat_batch(&[&real_x, &fake_x])?;
    let cond = match (real_c, fake_c) {
        (Some(a), Some(b)) => Some(VideoTensor::concat_batch(&[&a, &b])?),
        _ => None,
    };
    let labels: Vec<usize> = real_labels.iter().chain(&labels_f).copied().collect();
    let m = &mut state.model;
    let picks = m.d.spatial.sample_frames(2 * bsz, x.frames(), &mut state.rng)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.into_tensor());
    let cv = cond.map(|c| tape.constant(c.into_tensor()));
    let scores = {
        let mut fwd = Fwd::new(&mut tape, Mode::Train);
        let lab = m.labels(&labels);
        m.d.scores(&mut fwd, xv, cv, lab, &picks)?
    };
    let w = tape.shape(scores)[1];
    let real = tape.narrow(scores, 0, 0, bsz);
    let fake = tape.narrow(scores, 0, bsz, bsz);
    let loss = d_hinge_loss(&mut tape, real, fake);
    let lv = tape.value(loss).item();
    check_finite(state.iteration, "discriminator loss", lv)?;
    let sd = tape.value(scores).data().to_vec();
    let half = bsz * w;
    let rs = sd[..half].iter().sum::<f64>() / half as f64;
    let fs = sd[half..].iter().sum::<f64>() / half as f64;
    let grads = tape.backward(loss);
    state.opt_d.update(&mut m.d, &grads);
    state.d_updates += 1;
    Ok((lv, rs, fs))
}

/// One generator update through the (fixed-weight) discriminators.
fn g_update(state: &mut LevelState, frozen: &mut FrozenHierarchy, exp: &ExperimentConfig) -> Result<f64> {
    let bsz = exp.optimizer.batch_size;
    let labels = fake_labels(state.model.classes, bsz, &mut state.rng);
    let cond = if state.model.is_first() {
        None
    } else {
        Some(frozen.sample_condition(&labels, 1.0, state.model.config.frames, &mut state.rng)?)
    };
    let m = &mut state.model;
    let lat = m.latent(bsz, 1.0, &labels, &mut state.rng);
    let mut tape = Tape::new();
    let cv = cond.map(|c| tape.constant(c.into_tensor()));
    let x = {
        let mut fwd = Fwd::new(&mut tape, Mode::Train);
        m.g.forward(&mut fwd, &lat, cv, m.config.frames)?
    };
    let frames = tape.shape(x)[1];
    let picks = m.d.spatial.sample_frames(bsz, frames, &mut state.rng)?;
    tape.set_params_trainable(false);
    let scores = {
        let mut fwd = Fwd::new(&mut tape, Mode::Train);
        let lab = m.labels(&labels);
        m.d.scores(&mut fwd, x, cv, lab, &picks)?
    };
    let loss = g_hinge_loss(&mut tape, scores);
    let lv = tape.value(loss).item();
    check_finite(state.iteration, "generator loss", lv)?;
    let grads = tape.backward(loss);
    state.opt_g.update(&mut m.g, &grads);
    state.g_updates += 1;
    Ok(lv)
}

fn train_step(state: &mut LevelState, frozen: &mut FrozenHierarchy, ds: &Dataset, exp: &ExperimentConfig) -> Result<StepMetrics> {
    let n = exp.optimizer.d_steps_per_g;
    let (mut dl, mut rs, mut fs) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let (l, r, f) = d_update(state, frozen, ds, exp)?;
        dl += l / n as f64;
        rs += r / n as f64;
        fs += f / n as f64;
    }
    let gl = g_update(state, frozen, exp)?;
    state.iteration += 1;
    let m = StepMetrics { iteration: state.iteration, d_loss: dl, g_loss: gl, real_score: rs, fake_score: fs };
    state.history.push(m.clone());
    Ok(m)
}

/// `d_steps_per_g` discriminator updates, each on a fresh real batch and
/// fresh fakes, then one generator update.
pub fn train_first_level_step(state: &mut LevelState, ds: &Dataset, exp: &ExperimentConfig) -> Result<StepMetrics> {
    if !state.model.is_first() {
        return Err(HvgError::InvalidArgument("train_first_level_step on an upsampling level".into()));
    }
    train_step(state, &mut FrozenHierarchy::default(), ds, exp)
}

/// As [`train_first_level_step`] for an upsampling level; fake conditions
/// come from `frozen`, whose parameters are never touched.
pub fn train_upsampler_step(
    state: &mut LevelState,
    frozen: &mut FrozenHierarchy,
    ds: &Dataset,
    exp: &ExperimentConfig,
) -> Result<StepMetrics> {
    if state.model.is_first() {
        return Err(HvgError::InvalidArgument("train_upsampler_step on level 1".into()));
    }
    if frozen.levels.len() != state.model.index {
        return Err(HvgError::InvalidArgument(format!(
            "level {} needs {} frozen levels, got {}",
            state.model.index + 1,
            state.model.index,
            frozen.levels.len()
        )));
    }
    train_step(state, frozen, ds, exp)
}

/// Loads levels `0..index` from their checkpoints under `root`.
pub fn load_frozen(root: &Path, index: usize) -> Result<FrozenHierarchy> {
    let mut levels = Vec::with_capacity(index);
    for k in 0..index {
        let dir = level_dir(root, k);
        if !checkpoint_exists(&dir) {
            return Err(HvgError::MissingPrerequisite { level: index + 1, missing: k + 1, dir });
        }
        levels.push(load_model(&dir)?);
    }
    Ok(FrozenHierarchy { levels })
}

/// Progress callback of [`train_level`].
pub type Progress<'a> = &'a mut dyn FnMut(&StepMetrics);

/// Options of [`train_level`].
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub iterations: u64,
    pub checkpoint_every: u64,
    pub resume: bool,
}

/// Trains level `index` (0-based) to `opts.iterations` generator updates,
/// checkpointing to `level_dir(root, index)`. Lower levels must already be
/// checkpointed. Resumes from an existing checkpoint when `opts.resume`.
pub fn train_level(
    index: usize,
    exp: &ExperimentConfig,
    ds: &Dataset,
    root: &Path,
    opts: &TrainOptions,
    progress: Progress<'_>,
) -> Result<LevelState> {
    if index >= exp.levels.len() {
        return Err(HvgError::InvalidArgument(format!("config has {} levels, no level {}", exp.levels.len(), index + 1)));
    }
    let mut frozen = load_frozen(root, index)?;
    let dir = level_dir(root, index);
    std::fs::create_dir_all(&dir).map_err(crate::error::io_err(&dir))?;
    let _lock = CheckpointLock::acquire(&dir)?;
    let mut state = if opts.resume && checkpoint_exists(&dir) {
        load_level(&dir, exp)?
    } else {
        LevelState::new(exp, index, ds.num_classes)?
    };
    while state.iteration < opts.iterations {
        let before = state.rng.clone();
        let step = if index == 0 {
            train_first_level_step(&mut state, ds, exp)
        } else {
            train_upsampler_step(&mut state, &mut frozen, ds, exp)
        };
        match step {
            Ok(m) => progress(&m),
            Err(e @ HvgError::NonFiniteLoss { .. }) => {
                dump_failure(&dir, &state, &before)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        if opts.checkpoint_every > 0 && state.iteration % opts.checkpoint_every == 0 {
            save_level(&dir, exp, &mut state)?;
        }
    }
    save_level(&dir, exp, &mut state)?;
    Ok(state)
}

/// Writes the last real batch and the rng state that preceded the failed
/// step to `<dir>/failure/`.
fn dump_failure(dir: &Path, state: &LevelState, rng_before: &ChaCha8Rng) -> Result<PathBuf> {
    let out = dir.join("failure");
    std::fs::create_dir_all(&out).map_err(crate::error::io_err(&out))?;
    if let Some(v) = &state.last_real {
        let named = [NamedTensor { name: "last_real".into(), tensor: v.tensor().clone() }];
        write_named_tensors(&out.join("last_batch.bin"), &named)?;
    }
    crate::data::write_json(&out.join("rng.json"), rng_before)?;
    crate::data::write_json(&out.join("history.json"), &state.history)?;
    Ok(out)
}
