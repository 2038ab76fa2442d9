//! Conditional batch normalisation with per-frame statistics.
//!
//! Statistics are kept separately for every (timestep, channel) pair and
//! computed over the batch and spatial axes. Running statistics are indexed
//! by absolute timestep `Fwd::t_offset + t`.

use hvg_tensor::{Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linear::Linear;
use super::module::{Fwd, Mode, Module, Visitor};
use crate::error::{HvgError, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running mean and (unbiased) variance, `[timesteps][channels]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl RunningStats {
    pub fn timesteps(&self) -> usize {
        self.mean.len()
    }

    fn ensure(&mut self, t: usize, channels: usize) {
        while self.mean.len() <= t {
            self.mean.push(vec![0.0; channels]);
            self.var.push(vec![1.0; channels]);
        }
    }

    /// `r ← (1 − m)·r + m·b` with `m = BN_MOMENTUM`; unseen timesteps start
    /// from mean 0, variance 1.
    pub fn update_ema(&mut self, t: usize, mean: &[f64], var: &[f64]) {
        self.ensure(t, mean.len());
        for c in 0..mean.len() {
            self.mean[t][c] = (1.0 - BN_MOMENTUM) * self.mean[t][c] + BN_MOMENTUM * mean[c];
            self.var[t][c] = (1.0 - BN_MOMENTUM) * self.var[t][c] + BN_MOMENTUM * var[c];
        }
    }

    /// Cumulative average over recompute passes: pass 0 overwrites, pass k
    /// folds in with weight `1 / (k + 1)`.
    pub fn update_cumulative(&mut self, t: usize, pass: usize, mean: &[f64], var: &[f64]) {
        self.ensure(t, mean.len());
        let a = 1.0 / (pass + 1) as f64;
        for c in 0..mean.len() {
            if pass == 0 {
                self.mean[t][c] = mean[c];
                self.var[t][c] = var[c];
            } else {
                self.mean[t][c] += a * (mean[c] - self.mean[t][c]);
                self.var[t][c] += a * (var[c] - self.var[t][c]);
            }
        }
    }

    pub fn truncate(&mut self, timesteps: usize) {
        self.mean.truncate(timesteps);
        self.var.truncate(timesteps);
    }

    pub fn all_finite(&self) -> bool {
        self.mean.iter().chain(&self.var).flatten().all(|v| v.is_finite())
    }
}

/// `BN(x) · (1 + Δγ(c)) + β(c)`, with `Δγ`, `β` learned linear maps of the
/// condition vector `c`.
#[derive(Clone, Debug)]
pub struct CondBatchNorm {
    pub channels: usize,
    pub gain: Linear,
    pub bias: Linear,
    pub stats: RunningStats,
}

impl CondBatchNorm {
    pub fn new(channels: usize, cond_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            channels,
            gain: Linear::new(cond_dim, channels, true, rng)?,
            bias: Linear::new(cond_dim, channels, true, rng)?,
            stats: RunningStats::default(),
        })
    }

    /// Normalised input before the conditional affine map.
    pub fn normalize(&mut self, fwd: &mut Fwd<'_>, x: Var) -> Result<Var> {
        let s = fwd.tape.shape(x).to_vec();
        if s.len() != 5 || s[2] != self.channels {
            return Err(HvgError::Shape(format!("batch norm expects [B,T,{},H,W], got {s:?}", self.channels)));
        }
        let (t_len, c_len) = (s[1], s[2]);
        match fwd.mode {
            Mode::Train | Mode::Recompute { .. } => {
                let tape = &mut *fwd.tape;
                let mean = tape.mean_axes(x, &[0, 3, 4]);
                let xc = tape.sub(x, mean);
                let sq = tape.mul(xc, xc);
                let var = tape.mean_axes(sq, &[0, 3, 4]);
                let n = (s[0] * s[3] * s[4]) as f64;
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                let (mv, vv) = (tape.value(mean).data().to_vec(), tape.value(var).data().to_vec());
                for t in 0..t_len {
                    let m = &mv[t * c_len..(t + 1) * c_len];
                    let v: Vec<f64> = vv[t * c_len..(t + 1) * c_len].iter().map(|x| x * unbias).collect();
                    let abs_t = fwd.t_offset + t;
                    match fwd.mode {
                        Mode::Train => self.stats.update_ema(abs_t, m, &v),
                        Mode::Recompute { pass } => self.stats.update_cumulative(abs_t, pass, m, &v),
                        Mode::Frozen => unreachable!(),
                    }
                }
                let ve = tape.offset(var, BN_EPS);
                let inv = tape.powf(ve, -0.5);
                Ok(tape.mul(xc, inv))
            }
            Mode::Frozen => {
                let available = self.stats.timesteps();
                let mut mean = Vec::with_capacity(t_len * c_len);
                let mut inv = Vec::with_capacity(t_len * c_len);
                for t in 0..t_len {
                    let abs_t = fwd.t_offset + t;
                    if abs_t >= available {
                        return Err(HvgError::MissingStats { timestep: abs_t, available });
                    }
                    mean.extend_from_slice(&self.stats.mean[abs_t]);
                    inv.extend(self.stats.var[abs_t].iter().map(|v| 1.0 / (v + BN_EPS).sqrt()));
                }
                let tape = &mut *fwd.tape;
                let m = tape.constant(Tensor::new(&[1, t_len, c_len, 1, 1], mean));
                let k = tape.constant(Tensor::new(&[1, t_len, c_len, 1, 1], inv));
                let xc = tape.sub(x, m);
                Ok(tape.mul(xc, k))
            }
        }
    }

    pub fn forward(&mut self, fwd: &mut Fwd<'_>, x: Var, cond: Var) -> Result<Var> {
        let b = fwd.tape.shape(x)[0];
        let xn = self.normalize(fwd, x)?;
        let g = self.gain.forward(fwd, cond)?;
        let g = fwd.tape.offset(g, 1.0);
        let g = fwd.tape.reshape(g, &[b, 1, self.channels, 1, 1]);
        let be = self.bias.forward(fwd, cond)?;
        let be = fwd.tape.reshape(be, &[b, 1, self.channels, 1, 1]);
        let y = fwd.tape.mul(xn, g);
        Ok(fwd.tape.add(y, be))
    }
}

impl Module for CondBatchNorm {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.child("gain", &mut self.gain);
        v.child("bias", &mut self.bias);
        v.stats("stats", &mut self.stats);
    }
}
