//! Synthetic "moving shapes" videos, dataset storage and training batches.
//!
//! Videos are stored as 8-bit RGB, `[T, C, H, W]` row-major, and mapped to
//! `[-1, 1]` by `q / 127.5 − 1` when batched. The mapping is exact in both
//! directions for every `q`, so write/read round trips are bit-exact.

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, HvgError, Result};
use crate::video::{build_pyramid, CropWindow, VideoDims, VideoTensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
pub const HVGT_MAGIC: &[u8; 4] = b"HVGT";
pub const HVGT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disc,
    Square,
    Bar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Pixels per frame, `(dy, dx)`.
    pub velocity: (i32, i32),
    /// Radius (disc), half side (square) or half length (bar) in pixels.
    pub size: u32,
    pub color: [u8; 3],
}

/// Shape and motion family of each class: `(kind, (dy, dx) direction)`.
/// Classes 0–3 form the default 4-class dataset and each moves in its own
/// direction, so they stay separable at 8×8; 4 and 5 add bars.
pub const CLASS_TABLE: [(ShapeKind, (i32, i32)); 6] = [
    (ShapeKind::Disc, (0, 1)),
    (ShapeKind::Square, (1, 0)),
    (ShapeKind::Square, (0, -1)),
    (ShapeKind::Disc, (-1, 0)),
    (ShapeKind::Bar, (0, 1)),
    (ShapeKind::Bar, (1, 0)),
];

pub const DEFAULT_CLASSES: usize = 4;

/// One video with its label, pixels `[T, 3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub label: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl VideoRecord {
    pub fn to_video(&self) -> VideoTensor {
        let d = VideoDims { batch: 1, frames: self.frames, channels: 3, height: self.height, width: self.width };
        VideoTensor::from_fn(d, |i| u8_to_unit(self.pixels[i]))
    }
}

pub fn u8_to_unit(q: u8) -> f64 {
    q as f64 / 127.5 - 1.0
}

/// Nearest 8-bit level of a `[-1, 1]` value (clamped).
pub fn unit_to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Background colour and shape of a synthetic video, drawn from its seed.
pub fn synthetic_spec(class_label: usize, seed: u64, height: usize, width: usize) -> (ShapeSpec, [u8; 3], (i32, i32)) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ class_label as u64);
    let (kind, dir) = CLASS_TABLE[class_label];
    let speed = rng.random_range(1..=2);
    let scale = (height.min(width) as f64 / 32.0).max(0.25);
    let size = ((rng.random_range(3..=5) as f64) * scale).round().max(1.0) as u32;
    let color = [rng.random_range(150..=255), rng.random_range(150..=255), rng.random_range(150..=255)];
    let background = [rng.random_range(0..=60), rng.random_range(0..=60), rng.random_range(0..=60)];
    let start = (rng.random_range(0..height as i32), rng.random_range(0..width as i32));
    (ShapeSpec { kind, velocity: (dir.0 * speed, dir.1 * speed), size, color }, background, start)
}

fn wrap_offset(a: i64, b: i64, n: i64) -> i64 {
    let d = (a - b).rem_euclid(n);
    if d > n / 2 {
        d - n
    } else {
        d
    }
}

fn inside(kind: ShapeKind, size: i64, dy: i64, dx: i64) -> bool {
    match kind {
        ShapeKind::Disc => dy * dy + dx * dx <= size * size,
        ShapeKind::Square => dy.abs() <= size && dx.abs() <= size,
        // vertical bar; `render_shape` swaps axes for downward motion
        ShapeKind::Bar => dy.abs() <= size && dx.abs() <= 1,
    }
}

/// Renders `spec` with wrap-around motion from `start = (y, x)`. Returns
/// `[T, 3, H, W]` pixels.
pub fn render_shape(
    spec: &ShapeSpec,
    background: [u8; 3],
    start: (i32, i32),
    frames: usize,
    height: usize,
    width: usize,
) -> Vec<u8> {
    let mut out = vec![0u8; frames * 3 * height * width];
    let (h, w) = (height as i64, width as i64);
    let bar_horizontal = spec.kind == ShapeKind::Bar && spec.velocity.0 != 0;
    for t in 0..frames {
        let cy = (start.0 as i64 + spec.velocity.0 as i64 * t as i64).rem_euclid(h);
        let cx = (start.1 as i64 + spec.velocity.1 as i64 * t as i64).rem_euclid(w);
        for y in 0..h {
            for x in 0..w {
                let (mut dy, mut dx) = (wrap_offset(y, cy, h), wrap_offset(x, cx, w));
                if bar_horizontal {
                    std::mem::swap(&mut dy, &mut dx);
                }
                let c = if inside(spec.kind, spec.size as i64, dy, dx) { spec.color } else { background };
                for ch in 0..3 {
                    out[((t * 3 + ch) * height + y as usize) * width + x as usize] = c[ch];
                }
            }
        }
    }
    out
}

/// Deterministic synthetic video of `class_label` as 8-bit pixels.
pub fn synthetic_record(class_label: usize, seed: u64, frames: usize, height: usize, width: usize) -> Result<VideoRecord> {
    if class_label >= CLASS_TABLE.len() {
        return Err(HvgError::InvalidArgument(format!(
            "class {class_label} is not defined (have {})",
            CLASS_TABLE.len()
        )));
    }
    if frames == 0 || height == 0 || width == 0 {
        return Err(HvgError::InvalidArgument("synthetic videos need positive dimensions".into()));
    }
    let (spec, bg, start) = synthetic_spec(class_label, seed, height, width);
    Ok(VideoRecord {
        id: format!("c{class_label}_s{seed}"),
        label: class_label,
        frames,
        height,
        width,
        pixels: render_shape(&spec, bg, start, frames, height, width),
    })
}

pub fn generate_synthetic_video(class_label: usize, seed: u64, frames: usize, height: usize, width: usize) -> Result<VideoTensor> {
    Ok(synthetic_record(class_label, seed, frames, height, width)?.to_video())
}

/// Parameters of a generated synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SyntheticSpec {
    pub videos: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { videos: 512, frames: 32, height: 32, width: 32, classes: DEFAULT_CLASSES, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    /// Video `i` gets class `i mod classes` and seed `spec.seed · 1_000_003 + i`.
    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        if spec.classes == 0 || spec.classes > CLASS_TABLE.len() {
            return Err(HvgError::InvalidArgument(format!("classes must be in 1..={}", CLASS_TABLE.len())));
        }
        let videos = (0..spec.videos)
            .map(|i| {
                let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                let mut r = synthetic_record(i % spec.classes, seed, spec.frames, spec.height, spec.width)?;
                r.id = format!("{i:06}");
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { num_classes: spec.classes, videos })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.videos.iter().map(|v| v.label).collect()
    }

    /// Frames `start..start+len` of the given videos as one batch.
    pub fn batch(&self, indices: &[usize], start: usize, len: usize) -> Result<VideoTensor> {
        let parts = indices
            .iter()
            .map(|&i| {
                let r = self.videos.get(i).ok_or_else(|| HvgError::Dataset(format!("no video {i}")))?;
                r.to_video().narrow_frames(start, len)
            })
            .collect::<Result<Vec<_>>>()?;
        VideoTensor::concat_batch(&parts.iter().collect::<Vec<_>>())
    }

    pub fn min_frames(&self) -> usize {
        self.videos.iter().map(|v| v.frames).min().unwrap_or(0)
    }

    /// Splits into (even-indexed, odd-indexed) videos.
    pub fn halves(&self) -> (Dataset, Dataset) {
        let (a, b): (Vec<_>, Vec<_>) = self.videos.iter().cloned().enumerate().partition(|(i, _)| i % 2 == 0);
        (
            Dataset { num_classes: self.num_classes, videos: a.into_iter().map(|x| x.1).collect() },
            Dataset { num_classes: self.num_classes, videos: b.into_iter().map(|x| x.1).collect() },
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub class_label: usize,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub num_classes: usize,
    pub videos: Vec<ManifestEntry>,
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:05}.png")
}

/// Writes `[T, 3, H, W]` pixels as numbered PNG frames into `dir`.
pub fn write_frames(dir: &Path, pixels: &[u8], frames: usize, height: usize, width: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for t in 0..frames {
        let mut rgb = vec![0u8; height * width * 3];
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    rgb[(y * width + x) * 3 + c] = pixels[((t * 3 + c) * height + y) * width + x];
                }
            }
        }
        let path = dir.join(frame_file_name(t));
        let img = image::RgbImage::from_raw(width as u32, height as u32, rgb).expect("buffer size matches");
        img.save(&path).map_err(|source| HvgError::Image { path: path.clone(), source })?;
    }
    Ok(())
}

/// Writes `[T, 3, H, W]` pixels as a looping animated GIF, each frame
/// shown for `delay_ms` and enlarged by an integer `zoom`.
pub fn write_gif(path: &Path, pixels: &[u8], frames: usize, height: usize, width: usize, delay_ms: u32, zoom: usize) -> Result<()> {
    use image::codecs::gif::{GifEncoder, Repeat};
    let zoom = zoom.max(1);
    let img_err = |source| HvgError::Image { path: path.to_path_buf(), source };
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut enc = GifEncoder::new(std::io::BufWriter::new(file));
    enc.set_repeat(Repeat::Infinite).map_err(img_err)?;
    let (zh, zw) = (height * zoom, width * zoom);
    let gif_frames = (0..frames).map(|t| {
        let img = image::RgbaImage::from_fn(zw as u32, zh as u32, |x, y| {
            let (x, y) = (x as usize / zoom, y as usize / zoom);
            let px = |c: usize| pixels[((t * 3 + c) * height + y) * width + x];
            image::Rgba([px(0), px(1), px(2), 255])
        });
        image::Frame::from_parts(img, 0, 0, image::Delay::from_numer_denom_ms(delay_ms, 1))
    });
    enc.encode_frames(gif_frames).map_err(img_err)
}

fn read_image(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path).map_err(|source| HvgError::Image { path: path.to_path_buf(), source })?.to_rgb8())
}

fn push_frame(img: &image::RgbImage, out: &mut Vec<u8>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out.push(raw[(y * w + x) * 3 + c]);
            }
        }
    }
}

/// Writes `ds` under `root` (`manifest.json` + `videos/<id>/frame_*.png`).
/// A non-empty `root` is refused unless `overwrite` is set.
pub fn write_dataset(ds: &Dataset, root: &Path, overwrite: bool) -> Result<DatasetManifest> {
    if root.exists() {
        let non_empty = fs::read_dir(root).map_err(io_err(root))?.next().is_some();
        if non_empty && !overwrite {
            return Err(HvgError::Dataset(format!(
                "{} is not empty; pass the overwrite flag to replace it",
                root.display()
            )));
        }
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(ds.len());
    for v in &ds.videos {
        if !seen.insert(v.id.clone()) {
            return Err(HvgError::Dataset(format!("duplicate video id {}", v.id)));
        }
        let rel = format!("videos/{}", v.id);
        write_frames(&root.join(&rel), &v.pixels, v.frames, v.height, v.width)?;
        entries.push(ManifestEntry {
            id: v.id.clone(),
            class_label: v.label,
            num_frames: v.frames,
            height: v.height,
            width: v.width,
            path: rel,
        });
    }
    let manifest = DatasetManifest { format_version: FORMAT_VERSION, num_classes: ds.num_classes, videos: entries };
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let s = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, s + "\n").map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&s).map_err(json_err(path))
}

/// Reads and validates a dataset written by [`write_dataset`].
pub fn read_dataset(root: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest: DatasetManifest = read_json(&root.join(MANIFEST_FILE))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(HvgError::Dataset(format!(
            "unknown manifest format_version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let mut seen = HashSet::new();
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for e in &manifest.videos {
        if !seen.insert(e.id.clone()) {
            return Err(HvgError::Dataset(format!("duplicate video id {} in manifest", e.id)));
        }
        if e.class_label >= manifest.num_classes {
            return Err(HvgError::Dataset(format!("video {}: label {} out of range", e.id, e.class_label)));
        }
        let dir = root.join(&e.path);
        let mut pixels = Vec::with_capacity(e.num_frames * 3 * e.height * e.width);
        for t in 0..e.num_frames {
            let path = dir.join(frame_file_name(t));
            if !path.is_file() {
                return Err(HvgError::Dataset(format!("video {}: missing frame file {}", e.id, path.display())));
            }
            let img = read_image(&path)?;
            if (img.height() as usize, img.width() as usize) != (e.height, e.width) {
                return Err(HvgError::Dataset(format!(
                    "{}: frame is {}x{}, manifest declares {}x{}",
                    path.display(),
                    img.height(),
                    img.width(),
                    e.height,
                    e.width
                )));
            }
            push_frame(&img, &mut pixels);
        }
        videos.push(VideoRecord {
            id: e.id.clone(),
            label: e.class_label,
            frames: e.num_frames,
            height: e.height,
            width: e.width,
            pixels,
        });
    }
    Ok((Dataset { num_classes: manifest.num_classes, videos }, manifest))
}

/// Builds a dataset from per-video directories of numbered frame images
/// under `frames_root` and a labels file of `<id> <label>` lines. Frames
/// are taken in file-name order; blank lines and `#` comments are skipped.
pub fn ingest_frame_dirs(frames_root: &Path, labels_file: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(labels_file).map_err(io_err(labels_file))?;
    let mut videos = Vec::new();
    let mut max_label = 0;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(id), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(HvgError::Dataset(format!("{}:{}: expected `<id> <label>`", labels_file.display(), n + 1)));
        };
        let label: usize = label
            .parse()
            .map_err(|_| HvgError::Dataset(format!("{}:{}: bad label `{label}`", labels_file.display(), n + 1)))?;
        let dir = frames_root.join(id);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(HvgError::Dataset(format!("video {id}: no frames in {}", dir.display())));
        }
        let mut pixels = Vec::new();
        let mut dims = None;
        for f in &files {
            let img = read_image(f)?;
            let d = (img.height() as usize, img.width() as usize);
            if *dims.get_or_insert(d) != d {
                return Err(HvgError::Dataset(format!("{}: frame size differs from the first frame", f.display())));
            }
            push_frame(&img, &mut pixels);
        }
        let (height, width) = dims.expect("at least one frame");
        max_label = max_label.max(label);
        videos.push(VideoRecord { id: id.to_string(), label, frames: files.len(), height, width, pixels });
    }
    Ok(Dataset { num_classes: max_label + 1, videos })
}

/// Writes `[T, C, H, W]` u8 data in the `HVGT` raw format.
pub fn write_hvgt(path: &Path, dims: [usize; 4], payload: &[u8]) -> Result<()> {
    if dims.iter().product::<usize>() != payload.len() {
        return Err(HvgError::InvalidArgument(format!("HVGT payload of {} bytes does not match {dims:?}", payload.len())));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    let mut header = Vec::with_capacity(24);
    header.extend_from_slice(HVGT_MAGIC);
    header.extend_from_slice(&HVGT_VERSION.to_le_bytes());
    for d in dims {
        let d = u32::try_from(d).map_err(|_| HvgError::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    f.write_all(&header).and_then(|_| f.write_all(payload)).map_err(io_err(path))
}

pub fn read_hvgt(path: &Path) -> Result<([usize; 4], Vec<u8>)> {
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
    if bytes.len() < 24 || &bytes[..4] != HVGT_MAGIC {
        return Err(HvgError::Dataset(format!("{}: not an HVGT file", path.display())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    if word(0) as u32 != HVGT_VERSION {
        return Err(HvgError::Dataset(format!("{}: unsupported HVGT version {}", path.display(), word(0))));
    }
    let dims = [word(1), word(2), word(3), word(4)];
    let n: usize = dims.iter().product();
    if bytes.len() != 24 + n {
        return Err(HvgError::Dataset(format!(
            "{}: payload has {} bytes, header declares {n}",
            path.display(),
            bytes.len() - 24
        )));
    }
    Ok((dims, bytes[24..].to_vec()))
}

/// Quantises one batch element of `v` to `[T, C, H, W]` u8.
pub fn video_to_u8(v: &VideoTensor, b: usize) -> Vec<u8> {
    let d = v.dims();
    (0..d.frames).flat_map(|t| v.frame(b, t).iter().map(|&x| unit_to_u8(x)).collect::<Vec<_>>()).collect()
}

/// What a level trains on.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSpec {
    /// Pyramid factors `(K_T, K_S)`, coarse to fine.
    pub pyramid: Vec<(usize, usize)>,
    /// 1-based hierarchy level; level `l` trains on pyramid view `l − 1`.
    pub level: usize,
    /// Low-resolution window length for upsampling levels; `None` means the
    /// full coarse length.
    pub window: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainingBatch {
    First { x: VideoTensor, labels: Vec<usize> },
    Pair { low: VideoTensor, high: VideoTensor, windows: Vec<CropWindow>, labels: Vec<usize> },
}

impl TrainingBatch {
    pub fn labels(&self) -> &[usize] {
        match self {
            TrainingBatch::First { labels, .. } | TrainingBatch::Pair { labels, .. } => labels,
        }
    }
}

/// Draws `batch` videos uniformly (with replacement) and, for upsampling
/// levels, a uniformly placed temporal window per video.
pub fn sample_training_batch(ds: &Dataset, spec: &BatchSpec, batch: usize, rng: &mut impl Rng) -> Result<TrainingBatch> {
    if ds.is_empty() || batch == 0 {
        return Err(HvgError::Dataset("cannot sample from an empty dataset or with batch 0".into()));
    }
    if spec.level == 0 || spec.level > spec.pyramid.len() + 1 {
        return Err(HvgError::InvalidArgument(format!(
            "level {} is outside a {}-view pyramid",
            spec.level,
            spec.pyramid.len() + 1
        )));
    }
    let need: usize = spec.pyramid.iter().map(|f| f.0).product();
    let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..ds.len())).collect();
    let mut lows = Vec::new();
    let mut highs = Vec::new();
    let mut windows = Vec::new();
    for &i in &idx {
        let rec = &ds.videos[i];
        let usable = rec.frames / need * need;
        if usable == 0 {
            return Err(HvgError::Dataset(format!(
                "video {} has {} frames, fewer than the {need} the pyramid needs",
                rec.id, rec.frames
            )));
        }
        let p = build_pyramid(&rec.to_video().narrow_frames(0, usable)?, &spec.pyramid)?;
        if spec.level == 1 {
            lows.push(p.views[0].clone());
            continue;
        }
        let (lo, hi) = (spec.level - 2, spec.level - 1);
        let low_frames = p.views[lo].frames();
        let len = spec.window.unwrap_or(low_frames);
        if len == 0 || len > low_frames {
            return Err(HvgError::Dataset(format!(
                "video {}: window of {len} frames does not fit {low_frames} coarse frames",
                rec.id
            )));
        }
        let start = rng.random_range(0..=low_frames - len);
        let w = CropWindow::new(start, len, spec.pyramid[lo].0);
        let (l, h) = crate::video::temporal_crop_pair(&p, hi, &w)?;
        lows.push(l);
        highs.push(h);
        windows.push(w);
    }
    let labels = idx.iter().map(|&i| ds.videos[i].label).collect();
    let cat = |v: &[VideoTensor]| VideoTensor::concat_batch(&v.iter().collect::<Vec<_>>());
    Ok(if spec.level == 1 {
        TrainingBatch::First { x: cat(&lows)?, labels }
    } else {
        TrainingBatch::Pair { low: cat(&lows)?, high: cat(&highs)?, windows, labels }
    })
}

/// Shuffled order of `0..n`, used for epoch-style iteration with a seeded rng.
pub fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}
