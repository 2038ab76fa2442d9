//! Radially averaged power spectral density of video frames.
//!
//! Frames are converted to grayscale by averaging the channels. The power
//! `|F(ky, kx)|² / (H·W)` is binned by integer radial frequency: bin `r`
//! holds the frequencies with `r − 0.5 ≤ √(ky² + kx²) < r + 0.5`, using
//! signed frequencies. With this scaling the total power equals the sum of
//! squared pixels.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{HvgError, Result};
use crate::video::VideoTensor;

fn signed(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Radial bin of every frequency of an `n × n` spectrum, row-major.
pub fn radial_bins(n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n * n);
    for ky in 0..n {
        for kx in 0..n {
            let r = signed(ky, n).hypot(signed(kx, n));
            out.push((r + 0.5).floor() as usize);
        }
    }
    out
}

/// `|F|² / n²` of a square grayscale frame, row-major.
pub fn power_spectrum(frame: &[f64], n: usize) -> Result<Vec<f64>> {
    if frame.len() != n * n || n == 0 {
        return Err(HvgError::Shape(format!("expected a square {n}x{n} frame, got {} values", frame.len())));
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = buf[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            buf[y * n + x] = col[y];
        }
    }
    let scale = 1.0 / (n * n) as f64;
    Ok(buf.iter().map(|c| c.norm_sqr() * scale).collect())
}

/// Radially averaged spectrum `(mean power per bin, frequencies per bin)`.
pub fn radial_profile(frame: &[f64], n: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let p = power_spectrum(frame, n)?;
    let bins = radial_bins(n);
    let nb = bins.iter().max().map_or(0, |m| m + 1);
    let mut sum = vec![0.0; nb];
    let mut count = vec![0usize; nb];
    for (v, &b) in p.iter().zip(&bins) {
        sum[b] += v;
        count[b] += 1;
    }
    Ok((sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect(), count))
}

/// Mean of the channels of frame `t` of batch element `b`.
pub fn grayscale(v: &VideoTensor, b: usize, t: usize) -> Vec<f64> {
    let d = v.dims();
    let f = v.frame(b, t);
    let hw = d.height * d.width;
    (0..hw).map(|i| (0..d.channels).map(|c| f[c * hw + i]).sum::<f64>() / d.channels as f64).collect()
}

/// Mean and standard deviation over videos of the radial profile at one
/// frame index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdCurve {
    pub frame: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Frequencies per bin.
    pub counts: Vec<usize>,
    pub videos: usize,
}

impl PsdCurve {
    /// Fraction of bins where `other.mean` lies within `mean ± k·std`.
    pub fn fraction_within(&self, other: &PsdCurve, k: f64) -> f64 {
        let n = self.mean.len().min(other.mean.len());
        if n == 0 {
            return 0.0;
        }
        let inside = (0..n).filter(|&i| (other.mean[i] - self.mean[i]).abs() <= k * self.std[i]).count();
        inside as f64 / n as f64
    }
}

/// Curves for `frames` (0-based indices) over every video of every batch.
pub fn radial_psd(videos: &[VideoTensor], frames: &[usize]) -> Result<Vec<PsdCurve>> {
    let first = videos.first().ok_or_else(|| HvgError::InvalidArgument("no videos for the spectrum".into()))?;
    let d0 = first.dims();
    if d0.height != d0.width {
        return Err(HvgError::Shape(format!("spectra need square frames, got {}x{}", d0.height, d0.width)));
    }
    let n = d0.height;
    frames
        .iter()
        .map(|&t| {
            let mut profiles = Vec::new();
            let mut counts = Vec::new();
            for v in videos {
                let d = v.dims();
                if d.height != n || d.width != n {
                    return Err(HvgError::Shape("all videos must share one frame size".into()));
                }
                if t >= d.frames {
                    return Err(HvgError::InvalidArgument(format!("frame {t} requested from {}-frame videos", d.frames)));
                }
                for b in 0..d.batch {
                    let (p, c) = radial_profile(&grayscale(v, b, t), n)?;
                    profiles.push(p);
                    counts = c;
                }
            }
            let m = profiles.len();
            let bins = counts.len();
            let mean: Vec<f64> = (0..bins).map(|i| profiles.iter().map(|p| p[i]).sum::<f64>() / m as f64).collect();
            let std = (0..bins)
                .map(|i| {
                    if m < 2 {
                        return 0.0;
                    }
                    let ss: f64 = profiles.iter().map(|p| (p[i] - mean[i]).powi(2)).sum();
                    (ss / (m - 1) as f64).sqrt()
                })
                .collect();
            Ok(PsdCurve { frame: t, mean, std, counts, videos: m })
        })
        .collect()
}

/// CSV rows `source,frame,bin,mean,std`.
pub fn psd_csv(curves: &[(&str, &PsdCurve)]) -> String {
    let mut s = String::from("source,frame,bin,mean,std\n");
    for (name, c) in curves {
        for (i, (m, sd)) in c.mean.iter().zip(&c.std).enumerate() {
            s.push_str(&format!("{name},{},{i},{m:e},{sd:e}\n", c.frame));
        }
    }
    s
}

const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14], [148, 103, 189], [23, 190, 207]];

/// Log-power line plot of `curves`, one colour per curve, drawn with a
/// light band of `± std` for the first curve.
pub fn render_psd_plot(curves: &[&PsdCurve], path: &Path) -> Result<()> {
    let (w, h, pad) = (480u32, 320u32, 24u32);
    let mut img = image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
    let bins = curves.iter().map(|c| c.mean.len()).max().unwrap_or(0);
    let log = |v: f64| v.max(1e-12).log10();
    let vals: Vec<f64> = curves.iter().flat_map(|c| c.mean.iter().map(|&v| log(v))).collect();
    if bins < 2 || vals.is_empty() {
        return Err(HvgError::InvalidArgument("nothing to plot".into()));
    }
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5;
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.5;
    let px = |i: f64| pad as f64 + i / (bins - 1) as f64 * (w - 2 * pad) as f64;
    let py = |v: f64| (h - pad) as f64 - (log(v) - lo) / (hi - lo) * (h - 2 * pad) as f64;
    let mut put = |x: f64, y: f64, c: [u8; 3]| {
        let (x, y) = (x.round() as i64, y.round() as i64);
        if x >= 0 && y >= 0 && (x as u32) < w && (y as u32) < h {
            img.put_pixel(x as u32, y as u32, image::Rgb(c));
        }
    };
    for x in pad..w - pad {
        put(x as f64, (h - pad) as f64, [0, 0, 0]);
    }
    for y in pad..h - pad {
        put(pad as f64, y as f64, [0, 0, 0]);
    }
    if let Some(c) = curves.first() {
        for (i, (&m, &s)) in c.mean.iter().zip(&c.std).enumerate() {
            let (a, b) = (py(m + s), py((m - s).max(1e-12)));
            let mut y = a;
            while y <= b {
                put(px(i as f64), y, [200, 215, 235]);
                y += 1.0;
            }
        }
    }
    for (k, c) in curves.iter().enumerate() {
        let col = PALETTE[k % PALETTE.len()];
        for i in 1..c.mean.len() {
            let (x0, y0, x1, y1) = (px((i - 1) as f64), py(c.mean[i - 1]), px(i as f64), py(c.mean[i]));
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let a = s as f64 / steps as f64;
                put(x0 + a * (x1 - x0), y0 + a * (y1 - y0), col);
            }
        }
    }
    img.save(path).map_err(|source| HvgError::Image { path: path.to_path_buf(), source })
}
