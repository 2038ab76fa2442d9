//! Residual blocks of the generators and discriminators.

use hvg_tensor::Var;
use rand::Rng;

use super::gru::SepConv3d;
use super::linear::Conv;
use super::module::{Fwd, Module, Visitor};
use super::norm::CondBatchNorm;
use crate::error::Result;
use crate::video::nearest_indices;

/// Nearest-neighbour ×`k` spatial upsampling of `[N,T,C,H,W]`.
pub fn upsample_nearest(fwd: &mut Fwd<'_>, x: Var, k: usize) -> Var {
    if k == 1 {
        return x;
    }
    let s = fwd.tape.shape(x).to_vec();
    let y = fwd.tape.index_select(x, 3, &nearest_indices(s[3], s[3] * k));
    fwd.tape.index_select(y, 4, &nearest_indices(s[4], s[4] * k))
}

/// Convolution used inside a generator block.
#[derive(Clone, Debug)]
pub enum BlockConv {
    /// `1×3×3`, frames independent.
    Spatial(Conv),
    /// Temporal `3×1×1` then spatial `1×3×3`.
    Separable(SepConv3d),
}

impl BlockConv {
    pub fn forward(&mut self, fwd: &mut Fwd<'_>, x: Var) -> Result<Var> {
        match self {
            BlockConv::Spatial(c) => c.forward(fwd, x),
            BlockConv::Separable(c) => c.forward(fwd, x),
        }
    }

    pub fn temporal_convs(&self) -> usize {
        match self {
            BlockConv::Spatial(_) => 0,
            BlockConv::Separable(_) => 1,
        }
    }
}

impl Module for BlockConv {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        match self {
            BlockConv::Spatial(c) => c.visit(v),
            BlockConv::Separable(c) => c.visit(v),
        }
    }
}

/// Generator block `CBN → ReLU → [up ×2] → conv → CBN → ReLU → conv`,
/// plus a shortcut that is upsampled alongside and projected by a `1×1`
/// convolution when the channel count changes.
#[derive(Clone, Debug)]
pub struct ResBlockG {
    pub in_ch: usize,
    pub out_ch: usize,
    pub upsample: bool,
    pub bn1: CondBatchNorm,
    pub conv1: BlockConv,
    pub bn2: CondBatchNorm,
    pub conv2: BlockConv,
    pub shortcut: Option<Conv>,
}

impl ResBlockG {
    /// Per-frame 2D block.
    pub fn new_2d(in_ch: usize, out_ch: usize, cond_dim: usize, upsample: bool, rng: &mut impl Rng) -> Result<Self> {
        let conv1 = BlockConv::Spatial(Conv::conv2d(in_ch, out_ch, 3, true, rng)?);
        let conv2 = BlockConv::Spatial(Conv::conv2d(out_ch, out_ch, 3, true, rng)?);
        Self::assemble(in_ch, out_ch, cond_dim, upsample, conv1, conv2, rng)
    }

    /// Spatio-temporal block with separable 3D convolutions.
    pub fn new_separable(in_ch: usize, out_ch: usize, cond_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let conv1 = BlockConv::Separable(SepConv3d::new(in_ch, out_ch, rng)?);
        let conv2 = BlockConv::Separable(SepConv3d::new(out_ch, out_ch, rng)?);
        Self::assemble(in_ch, out_ch, cond_dim, false, conv1, conv2, rng)
    }

    fn assemble(
        in_ch: usize,
        out_ch: usize,
        cond_dim: usize,
        upsample: bool,
        conv1: BlockConv,
        conv2: BlockConv,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            in_ch,
            out_ch,
            upsample,
            bn1: CondBatchNorm::new(in_ch, cond_dim, rng)?,
            conv1,
            bn2: CondBatchNorm::new(out_ch, cond_dim, rng)?,
            conv2,
            shortcut: if in_ch != out_ch { Some(Conv::conv2d(in_ch, out_ch, 1, true, rng)?) } else { None },
        })
    }

    pub fn temporal_convs(&self) -> usize {
        self.conv1.temporal_convs() + self.conv2.temporal_convs()
    }

    pub fn forward(&mut self, fwd: &mut Fwd<'_>, x: Var, cond: Var) -> Result<Var> {
        let k = if self.upsample { 2 } else { 1 };
        let h = self.bn1.forward(fwd, x, cond)?;
        let h = fwd.tape.relu(h);
        let h = upsample_nearest(fwd, h, k);
        let h = self.conv1.forward(fwd, h)?;
        let h = self.bn2.forward(fwd, h, cond)?;
        let h = fwd.tape.relu(h);
        let h = self.conv2.forward(fwd, h)?;
        let s = upsample_nearest(fwd, x, k);
        let s = match &mut self.shortcut {
            Some(c) => c.forward(fwd, s)?,
            None => s,
        };
        Ok(fwd.tape.add(h, s))
    }
}

impl Module for ResBlockG {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.child("bn1", &mut self.bn1);
        v.child("conv1", &mut self.conv1);
        v.child("bn2", &mut self.bn2);
        v.child("conv2", &mut self.conv2);
        v.opt_child("shortcut", self.shortcut.as_mut().map(|s| s as &mut dyn Module));
    }
}

/// Discriminator block `[ReLU] → conv → ReLU → conv → [avg-pool ×2]` with
/// a shortcut (`1×1` projection when channels change, pooled alongside).
/// No normalisation.
#[derive(Clone, Debug)]
pub struct ResBlockD {
    pub in_ch: usize,
    pub out_ch: usize,
    pub downsample: bool,
    pub three_d: bool,
    /// False for a block fed with raw pixels: the first ReLU is skipped.
    pub preactivation: bool,
    pub conv1: Conv,
    pub conv2: Conv,
    pub shortcut: Option<Conv>,
}

impl ResBlockD {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        downsample: bool,
        three_d: bool,
        preactivation: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let kt = if three_d { 3 } else { 1 };
        Ok(Self {
            in_ch,
            out_ch,
            downsample,
            three_d,
            preactivation,
            conv1: Conv::new(in_ch, out_ch, (kt, 3, 3), true, rng)?,
            conv2: Conv::new(out_ch, out_ch, (kt, 3, 3), true, rng)?,
            shortcut: if in_ch != out_ch { Some(Conv::conv2d(in_ch, out_ch, 1, true, rng)?) } else { None },
        })
    }

    pub fn forward(&mut self, fwd: &mut Fwd<'_>, x: Var) -> Result<Var> {
        let h = if self.preactivation { fwd.tape.relu(x) } else { x };
        let h = self.conv1.forward(fwd, h)?;
        let h = fwd.tape.relu(h);
        let mut h = self.conv2.forward(fwd, h)?;
        let mut s = match &mut self.shortcut {
            Some(c) => c.forward(fwd, x)?,
            None => x,
        };
        if self.downsample {
            h = fwd.tape.avg_pool(h, 2);
            s = fwd.tape.avg_pool(s, 2);
        }
        Ok(fwd.tape.add(h, s))
    }
}

impl Module for ResBlockD {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.child("conv1", &mut self.conv1);
        v.child("conv2", &mut self.conv2);
        v.opt_child("shortcut", self.shortcut.as_mut().map(|s| s as &mut dyn Module));
    }
}
