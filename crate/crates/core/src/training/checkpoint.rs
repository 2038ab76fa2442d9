//! Per-level checkpoint directories.
//!
//! ```text
//! level{l}/config.json     level index, class count, level config
//! level{l}/weights.bin     parameters and power-iteration vectors
//! level{l}/optimizer.bin   Adam moments (`m.<name>`, `v.<name>`) and steps
//! level{l}/bn_stats.json   running statistics by name
//! level{l}/meta.json       counters, seed, rng state, loss history
//! level{l}/.lock           present while a writer holds the directory
//! ```
//!
//! `*.bin` files share one layout: `HVGW`, a little-endian `u32` version,
//! a `u64` header length, a JSON manifest of `{name, dtype, shape, offset}`
//! and the little-endian `f64` payload. Offsets are bytes into the payload.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use hvg_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, LevelState, StepMetrics};
use crate::config::{ExperimentConfig, LevelConfig};
use crate::data::{read_json, write_json};
use crate::error::{io_err, HvgError, Result};
use crate::layers::{Module, RunningStats, Slot};
use crate::model::LevelModel;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"HVGW";
const FORMAT_VERSION: u32 = 1;

const CONFIG_FILE: &str = "config.json";
const WEIGHTS_FILE: &str = "weights.bin";
const OPTIMIZER_FILE: &str = "optimizer.bin";
const STATS_FILE: &str = "bn_stats.json";
const META_FILE: &str = "meta.json";
const LOCK_FILE: &str = ".lock";

pub fn level_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("level{}", index + 1))
}

/// A checkpoint counts as present once its metadata has been written,
/// which is the last file of a save.
pub fn checkpoint_exists(dir: &Path) -> bool {
    dir.join(META_FILE).is_file() && dir.join(WEIGHTS_FILE).is_file()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

pub fn write_named_tensors(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for t in tensors {
        entries.push(ManifestEntry { name: t.name.clone(), dtype: "f64".into(), shape: t.tensor.shape().to_vec(), offset });
        offset += 8 * t.tensor.numel() as u64;
    }
    let header = serde_json::to_vec(&entries).map_err(crate::error::json_err(path))?;
    let mut buf = Vec::with_capacity(16 + header.len() + offset as usize);
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for t in tensors {
        for v in t.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("bin.tmp");
    File::create(&tmp).and_then(|mut f| f.write_all(&buf)).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_named_tensors(path: &Path) -> Result<Vec<NamedTensor>> {
    let mut buf = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(io_err(path))?;
    let bad = |m: &str| HvgError::Checkpoint(format!("{}: {m}", path.display()));
    if buf.len() < 16 || &buf[..4] != WEIGHTS_MAGIC {
        return Err(bad("not a weights file"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
    let header = buf.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let entries: Vec<ManifestEntry> = serde_json::from_slice(header).map_err(crate::error::json_err(path))?;
    let payload = &buf[16 + hlen..];
    entries
        .into_iter()
        .map(|e| {
            if e.dtype != "f64" {
                return Err(bad(&format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let bytes = payload.get(start..start + 8 * n).ok_or_else(|| bad(&format!("{}: truncated payload", e.name)))?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            Ok(NamedTensor { name: e.name, tensor: Tensor::new(&e.shape, data) })
        })
        .collect()
}

/// Parameters and buffers of `m` in visit order.
fn module_tensors(m: &mut dyn Module) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    m.visit(&mut crate::layers::Visitor::new(&mut |name, s| match s {
        Slot::Param(p) => out.push(NamedTensor { name: name.into(), tensor: p.value.clone() }),
        Slot::Buffer(t) => out.push(NamedTensor { name: name.into(), tensor: t.clone() }),
        Slot::Stats(_) => {}
    }));
    out
}

fn module_stats(m: &mut dyn Module) -> BTreeMap<String, RunningStats> {
    let mut out = BTreeMap::new();
    m.for_each_stats(&mut |name, s| {
        out.insert(name.to_string(), s.clone());
    });
    out
}

/// Overwrites every parameter, buffer and statistic of `m` by name. The
/// names and shapes must match exactly.
fn restore_module(m: &mut dyn Module, tensors: Vec<NamedTensor>, mut stats: BTreeMap<String, RunningStats>) -> Result<()> {
    let mut by_name: BTreeMap<String, Tensor> = tensors.into_iter().map(|t| (t.name, t.tensor)).collect();
    let mut err = None;
    m.visit(&mut crate::layers::Visitor::new(&mut |name, s| {
        if err.is_some() {
            return;
        }
        match s {
            Slot::Param(p) => put(&mut by_name, name, &mut p.value, &mut err),
            Slot::Buffer(t) => put(&mut by_name, name, t, &mut err),
            Slot::Stats(st) => match stats.remove(name) {
                Some(v) => *st = v,
                None => err = Some(HvgError::Checkpoint(format!("missing statistics `{name}`"))),
            },
        }
    }));
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(extra) = by_name.keys().next().or(stats.keys().next()) {
        return Err(HvgError::Checkpoint(format!("unexpected entry `{extra}`")));
    }
    Ok(())
}

fn put(by_name: &mut BTreeMap<String, Tensor>, name: &str, dst: &mut Tensor, err: &mut Option<HvgError>) {
    match by_name.remove(name) {
        Some(t) if t.shape() == dst.shape() => *dst = t,
        Some(t) => {
            *err = Some(HvgError::Checkpoint(format!("`{name}` has shape {:?}, model expects {:?}", t.shape(), dst.shape())))
        }
        None => *err = Some(HvgError::Checkpoint(format!("missing tensor `{name}`"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub experiment: String,
    /// 0-based level index.
    pub index: usize,
    pub classes: usize,
    pub level: LevelConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iteration: u64,
    pub d_updates: u64,
    pub g_updates: u64,
    pub seed: u64,
    pub rng: ChaCha8Rng,
    pub adam_g_step: u64,
    pub adam_d_step: u64,
    pub history: Vec<StepMetrics>,
}

fn adam_tensors(opt: &Adam, prefix: &str) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    for (k, m) in &opt.m {
        out.push(NamedTensor { name: format!("{prefix}m.{k}"), tensor: m.clone() });
    }
    for (k, v) in &opt.v {
        out.push(NamedTensor { name: format!("{prefix}v.{k}"), tensor: v.clone() });
    }
    out
}

fn restore_adam(opt: &mut Adam, all: &[NamedTensor], prefix: &str, step: u64) {
    opt.step = step;
    opt.m.clear();
    opt.v.clear();
    for t in all {
        if let Some(rest) = t.name.strip_prefix(prefix) {
            if let Some(k) = rest.strip_prefix("m.") {
                opt.m.insert(k.to_string(), t.tensor.clone());
            } else if let Some(k) = rest.strip_prefix("v.") {
                opt.v.insert(k.to_string(), t.tensor.clone());
            }
        }
    }
}

pub fn save_level(dir: &Path, exp: &ExperimentConfig, state: &mut LevelState) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let m = &mut state.model;
    write_json(
        &dir.join(CONFIG_FILE),
        &CheckpointConfig { experiment: exp.name.clone(), index: m.index, classes: m.classes, level: m.config.clone() },
    )?;
    write_named_tensors(&dir.join(WEIGHTS_FILE), &module_tensors(m))?;
    write_json(&dir.join(STATS_FILE), &module_stats(m))?;
    let mut opt = adam_tensors(&state.opt_g, "g.");
    opt.extend(adam_tensors(&state.opt_d, "d."));
    write_named_tensors(&dir.join(OPTIMIZER_FILE), &opt)?;
    write_json(
        &dir.join(META_FILE),
        &CheckpointMeta {
            iteration: state.iteration,
            d_updates: state.d_updates,
            g_updates: state.g_updates,
            seed: state.seed,
            rng: state.rng.clone(),
            adam_g_step: state.opt_g.step,
            adam_d_step: state.opt_d.step,
            history: state.history.clone(),
        },
    )
}

fn read_model(dir: &Path) -> Result<LevelModel> {
    let cfg: CheckpointConfig = read_json(&dir.join(CONFIG_FILE))?;
    // Initial values are overwritten; the rng only fixes the structure.
    let mut m = LevelModel::new(cfg.index, &cfg.level, cfg.classes, &mut ChaCha8Rng::seed_from_u64(0))?;
    let tensors = read_named_tensors(&dir.join(WEIGHTS_FILE))?;
    let stats: BTreeMap<String, RunningStats> = read_json(&dir.join(STATS_FILE))?;
    restore_module(&mut m, tensors, stats)?;
    Ok(m)
}

/// Model of a checkpoint, for sampling or as a frozen lower level.
pub fn load_model(dir: &Path) -> Result<LevelModel> {
    if !checkpoint_exists(dir) {
        return Err(HvgError::Checkpoint(format!("no checkpoint in {}", dir.display())));
    }
    read_model(dir)
}

/// Full training state of a checkpoint, for resuming. The stored level
/// config must match `exp`.
pub fn load_level(dir: &Path, exp: &ExperimentConfig) -> Result<LevelState> {
    let model = load_model(dir)?;
    if exp.levels.get(model.index) != Some(&model.config) {
        return Err(HvgError::Checkpoint(format!(
            "{}: stored config of level {} differs from the experiment config",
            dir.display(),
            model.index + 1
        )));
    }
    let meta: CheckpointMeta = read_json(&dir.join(META_FILE))?;
    let opt = read_named_tensors(&dir.join(OPTIMIZER_FILE))?;
    let mut opt_g = Adam::new(exp.optimizer.lr_g, &exp.optimizer);
    let mut opt_d = Adam::new(exp.optimizer.lr_d, &exp.optimizer);
    restore_adam(&mut opt_g, &opt, "g.", meta.adam_g_step);
    restore_adam(&mut opt_d, &opt, "d.", meta.adam_d_step);
    Ok(LevelState {
        model,
        opt_g,
        opt_d,
        rng: meta.rng,
        seed: meta.seed,
        iteration: meta.iteration,
        d_updates: meta.d_updates,
        g_updates: meta.g_updates,
        history: meta.history,
        last_real: None,
    })
}

/// SHA-256 of a checkpoint's `weights.bin`, hex encoded.
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    let p = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&p).map_err(io_err(&p))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Exclusive writer lock on a checkpoint directory, released on drop.
#[derive(Debug)]
pub struct CheckpointLock {
    path: PathBuf,
}

impl CheckpointLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(HvgError::Checkpoint(format!(
                "{} is locked by another process; remove {} if that process is gone",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for CheckpointLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
