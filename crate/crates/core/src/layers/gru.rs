//! Convolutional GRU and separable 3D convolution: the two temporal units.

use hvg_tensor::Var;
use rand::Rng;

use super::linear::Conv;
use super::module::{Fwd, Module, Visitor};
use crate::error::{HvgError, Result};

/// Two-gate convolutional GRU with a ReLU candidate:
///
/// ```text
/// r  = σ(conv_r([x, h]))      z = σ(conv_z([x, h]))
/// h̃  = relu(conv_h([x, r ⊙ h]))
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
///
/// The hidden state starts at zero.
#[derive(Clone, Debug)]
pub struct ConvGru {
    pub in_channels: usize,
    pub hidden: usize,
    pub reset: Conv,
    pub update: Conv,
    pub candidate: Conv,
}

impl ConvGru {
    pub fn new(in_channels: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let c = in_channels + hidden;
        Ok(Self {
            in_channels,
            hidden,
            reset: Conv::conv2d(c, hidden, 3, true, rng)?,
            update: Conv::conv2d(c, hidden, 3, true, rng)?,
            candidate: Conv::conv2d(c, hidden, 3, true, rng)?,
        })
    }

    /// One step on single frames `h: [B,1,hidden,H,W]`, `x: [B,1,in,H,W]`.
    pub fn step(&mut self, fwd: &mut Fwd<'_>, h: Var, x: Var) -> Result<Var> {
        let (hs, xs) = (fwd.tape.shape(h).to_vec(), fwd.tape.shape(x).to_vec());
        if hs.len() != 5 || xs.len() != 5 || hs[2] != self.hidden || xs[2] != self.in_channels {
            return Err(HvgError::Shape(format!(
                "conv GRU expects h [B,1,{},H,W] and x [B,1,{},H,W], got {hs:?} and {xs:?}",
                self.hidden, self.in_channels
            )));
        }
        if hs[0] != xs[0] || hs[3..] != xs[3..] {
            return Err(HvgError::Shape(format!("conv GRU state {hs:?} not aligned with input {xs:?}")));
        }
        let xh = fwd.tape.concat(&[x, h], 2);
        let r = self.reset.forward(fwd, xh)?;
        let r = fwd.tape.sigmoid(r);
        let z = self.update.forward(fwd, xh)?;
        let z = fwd.tape.sigmoid(z);
        let rh = fwd.tape.mul(r, h);
        let xrh = fwd.tape.concat(&[x, rh], 2);
        let cand = self.candidate.forward(fwd, xrh)?;
        let cand = fwd.tape.relu(cand);
        // h + z (h̃ − h)
        let d = fwd.tape.sub(cand, h);
        let zd = fwd.tape.mul(z, d);
        Ok(fwd.tape.add(h, zd))
    }

    /// Runs over the time axis of `x: [B,T,in,H,W]`, returning every state.
    pub fn forward(&mut self, fwd: &mut Fwd<'_>, x: Var) -> Result<Var> {
        let s = fwd.tape.shape(x).to_vec();
        if s.len() != 5 {
            return Err(HvgError::Shape(format!("conv GRU expects a rank-5 input, got {s:?}")));
        }
        let mut h = fwd.tape.constant(hvg_tensor::Tensor::zeros(&[s[0], 1, self.hidden, s[3], s[4]]));
        let mut states = Vec::with_capacity(s[1]);
        for t in 0..s[1] {
            let xt = fwd.tape.narrow(x, 1, t, 1);
            h = self.step(fwd, h, xt)?;
            states.push(h);
        }
        Ok(fwd.tape.concat(&states, 1))
    }
}

impl Module for ConvGru {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.child("reset", &mut self.reset);
        v.child("update", &mut self.update);
        v.child("candidate", &mut self.candidate);
    }
}

/// Temporal `3×1×1` convolution followed by a spatial `1×3×3` one.
#[derive(Clone, Debug)]
pub struct SepConv3d {
    pub temporal: Conv,
    pub spatial: Conv,
}

impl SepConv3d {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            temporal: Conv::new(in_ch, out_ch, (3, 1, 1), true, rng)?,
            spatial: Conv::new(out_ch, out_ch, (1, 3, 3), true, rng)?,
        })
    }

    pub fn forward(&mut self, fwd: &mut Fwd<'_>, x: Var) -> Result<Var> {
        let y = self.temporal.forward(fwd, x)?;
        self.spatial.forward(fwd, y)
    }
}

impl Module for SepConv3d {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.child("temporal", &mut self.temporal);
        v.child("spatial", &mut self.spatial);
    }
}
