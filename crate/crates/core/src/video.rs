//! Video tensors, the spatial/temporal subsampling operators, pyramids and
//! temporal crops.
//!
//! Videos are `[B, T, C, H, W]` arrays. Two operators relate the levels of a
//! pyramid:
//!
//! * `f_t` ([`temporal_subsample`]) keeps frames `phase, phase + K_T, …`;
//! * `f_s` ([`spatial_downsample`]) averages each `K_S × K_S` block, the
//!   half-pixel-centred bilinear kernel for `K_S = 2` and its area
//!   (antialiased) generalisation for larger integer factors. Every input
//!   pixel has weight `1 / K_S²` in exactly one output pixel.
//!
//! A coarser view is always `f_s(f_t(finer))`.

use hvg_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{HvgError, Result};

/// Dense `[B, T, C, H, W]` video, canonically valued in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor(Tensor);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoDims {
    pub batch: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl VideoDims {
    pub fn shape(&self) -> [usize; 5] {
        [self.batch, self.frames, self.channels, self.height, self.width]
    }
}

impl VideoTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 5 {
            return Err(HvgError::Shape(format!("video must be rank 5 [B,T,C,H,W], got {s:?}")));
        }
        if s.iter().any(|&d| d == 0) {
            return Err(HvgError::Shape(format!("video dims must be positive, got {s:?}")));
        }
        Ok(Self(t))
    }

    pub fn zeros(dims: VideoDims) -> Self {
        Self(Tensor::zeros(&dims.shape()))
    }

    pub fn from_fn(dims: VideoDims, f: impl FnMut(usize) -> f64) -> Self {
        Self(Tensor::from_fn(&dims.shape(), f))
    }

    pub fn dims(&self) -> VideoDims {
        let s = self.0.shape();
        VideoDims { batch: s[0], frames: s[1], channels: s[2], height: s[3], width: s[4] }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn frames(&self) -> usize {
        self.0.dim(1)
    }

    /// Pixels of frame `t` of batch element `b`, laid out `[C, H, W]`.
    pub fn frame(&self, b: usize, t: usize) -> &[f64] {
        let d = self.dims();
        let len = d.channels * d.height * d.width;
        let start = (b * d.frames + t) * len;
        &self.0.data()[start..start + len]
    }

    pub fn is_finite(&self) -> bool {
        self.0.all_finite()
    }

    pub fn in_range(&self, lo: f64, hi: f64) -> bool {
        self.0.data().iter().all(|&v| (lo..=hi).contains(&v))
    }

    /// Batch-axis slice.
    pub fn select_batch(&self, indices: &[usize]) -> Self {
        Self(self.0.index_select(0, indices))
    }

    /// Frames `start..start + len`.
    pub fn narrow_frames(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames() {
            return Err(HvgError::Shape(format!(
                "frame range {start}..{} outside video of {} frames",
                start + len,
                self.frames()
            )));
        }
        Ok(Self(self.0.narrow(1, start, len)))
    }

    pub fn concat_batch(parts: &[&VideoTensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| HvgError::InvalidArgument("empty batch".into()))?.dims();
        for p in parts {
            let d = p.dims();
            if (d.frames, d.channels, d.height, d.width) != (first.frames, first.channels, first.height, first.width) {
                return Err(HvgError::Shape(format!("cannot batch {:?} with {:?}", d, first)));
            }
        }
        let ts: Vec<&Tensor> = parts.iter().map(|p| &p.0).collect();
        Ok(Self(Tensor::concat(&ts, 0)))
    }
}

/// `f_s`: box/bilinear downsampling by an integer factor.
pub fn spatial_downsample(v: &VideoTensor, factor: usize) -> Result<VideoTensor> {
    let d = v.dims();
    if factor == 0 {
        return Err(HvgError::InvalidArgument("spatial factor must be positive".into()));
    }
    if d.height % factor != 0 || d.width % factor != 0 {
        return Err(HvgError::Shape(format!(
            "spatial_downsample: {}x{} frames are not divisible by factor {factor}",
            d.height, d.width
        )));
    }
    if factor == 1 {
        return Ok(v.clone());
    }
    Ok(VideoTensor(v.0.avg_pool(factor)))
}

/// Frame indices kept by `f_t`: `phase, phase + factor, …` (ceil convention,
/// so the count is `ceil((frames − phase) / factor)`).
pub fn temporal_indices(frames: usize, factor: usize, phase: usize) -> Result<Vec<usize>> {
    if factor == 0 {
        return Err(HvgError::InvalidArgument("temporal factor must be positive".into()));
    }
    if phase >= factor {
        return Err(HvgError::InvalidArgument(format!(
            "temporal phase {phase} must be smaller than the factor {factor}"
        )));
    }
    if phase >= frames {
        return Err(HvgError::Shape(format!("phase {phase} leaves no frames of {frames}")));
    }
    Ok((phase..frames).step_by(factor).collect())
}

/// `f_t`: temporal subsampling.
pub fn temporal_subsample(v: &VideoTensor, factor: usize, phase: usize) -> Result<VideoTensor> {
    let idx = temporal_indices(v.frames(), factor, phase)?;
    Ok(VideoTensor(v.0.index_select(1, &idx)))
}

/// Nearest-neighbour temporal interpolation: every frame repeated `factor` times.
pub fn replicate_frames(v: &VideoTensor, factor: usize) -> Result<VideoTensor> {
    if factor == 0 {
        return Err(HvgError::InvalidArgument("replication factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(v.clone());
    }
    Ok(VideoTensor(v.0.index_select(1, &replicate_indices(v.frames(), factor))))
}

pub(crate) fn replicate_indices(frames: usize, factor: usize) -> Vec<usize> {
    (0..frames * factor).map(|i| i / factor).collect()
}

/// Source index for each of `dst` output positions of a nearest-neighbour
/// resize from `src` positions: `floor(i · src / dst)`. Upsampling by an
/// integer factor duplicates pixels; downsampling keeps the top-left pixel of
/// each cell.
pub fn nearest_indices(src: usize, dst: usize) -> Vec<usize> {
    (0..dst).map(|i| i * src / dst).collect()
}

pub fn nearest_resize(v: &VideoTensor, height: usize, width: usize) -> Result<VideoTensor> {
    if height == 0 || width == 0 {
        return Err(HvgError::InvalidArgument("resize target must be at least 1x1".into()));
    }
    let d = v.dims();
    if (d.height, d.width) == (height, width) {
        return Ok(v.clone());
    }
    let t = v.0.index_select(3, &nearest_indices(d.height, height));
    Ok(VideoTensor(t.index_select(4, &nearest_indices(d.width, width))))
}

/// Aligned views `x¹ … x^L` of one batch of videos, coarse to fine.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidSample {
    pub views: Vec<VideoTensor>,
    /// `(K_T, K_S)` between `views[i]` and `views[i + 1]`.
    pub factors: Vec<(usize, usize)>,
}

impl PyramidSample {
    pub fn levels(&self) -> usize {
        self.views.len()
    }

    pub fn temporal_factors(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.0).collect()
    }

    pub fn spatial_factors(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.1).collect()
    }

    /// Checks `views[l] == f_s(f_t(views[l + 1]))` bit for bit.
    pub fn is_consistent(&self) -> bool {
        self.factors.iter().enumerate().all(|(l, &(kt, ks))| {
            temporal_subsample(&self.views[l + 1], kt, 0)
                .and_then(|v| spatial_downsample(&v, ks))
                .map(|v| v == self.views[l])
                .unwrap_or(false)
        })
    }
}

/// Builds the pyramid of `v` for `factors`, listed coarse to fine: the last
/// entry relates the two finest views.
pub fn build_pyramid(v: &VideoTensor, factors: &[(usize, usize)]) -> Result<PyramidSample> {
    let mut views = vec![v.clone()];
    for (i, &(kt, ks)) in factors.iter().enumerate().rev() {
        let fine = views.last().expect("non-empty");
        let d = fine.dims();
        if kt == 0 || ks == 0 || d.frames % kt != 0 || d.height % ks != 0 || d.width % ks != 0 {
            return Err(HvgError::Shape(format!(
                "pyramid level {}: {}/{}x{} is not divisible by (K_T={kt}, K_S={ks})",
                i + 1,
                d.frames,
                d.height,
                d.width
            )));
        }
        let coarse = spatial_downsample(&temporal_subsample(fine, kt, 0)?, ks)?;
        views.push(coarse);
    }
    views.reverse();
    Ok(PyramidSample { views, factors: factors.to_vec() })
}

/// A temporal crop on two adjacent levels covering the same time span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub low_start: usize,
    pub low_len: usize,
    pub high_start: usize,
    pub high_len: usize,
}

impl CropWindow {
    pub fn new(low_start: usize, low_len: usize, temporal_factor: usize) -> Self {
        Self {
            low_start,
            low_len,
            high_start: low_start * temporal_factor,
            high_len: low_len * temporal_factor,
        }
    }

    pub fn full(low_frames: usize, temporal_factor: usize) -> Self {
        Self::new(0, low_frames, temporal_factor)
    }

    pub fn validate(&self, temporal_factor: usize, low_frames: usize, high_frames: usize) -> Result<()> {
        if self.low_len == 0 {
            return Err(HvgError::InvalidArgument("empty crop window".into()));
        }
        if self.high_start != self.low_start * temporal_factor || self.high_len != self.low_len * temporal_factor {
            return Err(HvgError::InvalidArgument(format!(
                "crop window {self:?} is not aligned for K_T={temporal_factor}"
            )));
        }
        if self.low_start + self.low_len > low_frames || self.high_start + self.high_len > high_frames {
            return Err(HvgError::Shape(format!(
                "crop window {self:?} exceeds videos of {low_frames}/{high_frames} frames"
            )));
        }
        Ok(())
    }
}

/// The `(x^{l−1}, x^l)` crops of `window`, where `fine` indexes `p.views`
/// (`fine ≥ 1`).
pub fn temporal_crop_pair(
    p: &PyramidSample,
    fine: usize,
    window: &CropWindow,
) -> Result<(VideoTensor, VideoTensor)> {
    if fine == 0 || fine >= p.views.len() {
        return Err(HvgError::InvalidArgument(format!(
            "level index {fine} has no coarser partner in a {}-view pyramid",
            p.views.len()
        )));
    }
    let kt = p.factors[fine - 1].0;
    let (low, high) = (&p.views[fine - 1], &p.views[fine]);
    window.validate(kt, low.frames(), high.frames())?;
    Ok((
        low.narrow_frames(window.low_start, window.low_len)?,
        high.narrow_frames(window.high_start, window.high_len)?,
    ))
}
