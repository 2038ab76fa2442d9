//! Convolution, linear and embedding layers with optional spectral
//! normalisation.

use hvg_tensor::{Param, Tensor, Var};
use rand::Rng;

use super::init::orthogonal_init;
use super::module::{Fwd, Module, Visitor};
use super::spectral::SpectralNorm;
use crate::error::{HvgError, Result};

fn sn_weight(fwd: &mut Fwd<'_>, w: &Param, sn: &mut Option<SpectralNorm>) -> Var {
    match sn {
        Some(sn) => sn.apply(fwd, w),
        None => fwd.tape.param(w),
    }
}

/// Same-padded, stride-1 convolution over `[N, T, C, H, W]`. Weight layout
/// `[out, in, kt, kh, kw]`; `kt = 1` convolves frames independently.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: Param,
    pub bias: Option<Param>,
    pub sn: Option<SpectralNorm>,
}

impl Conv {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize, usize),
        spectral: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (kt, kh, kw) = kernel;
        if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(HvgError::InvalidArgument(format!("kernel {kernel:?} must have odd extents")));
        }
        let shape = [out_ch, in_ch, kt, kh, kw];
        let weight = Param::new(orthogonal_init(&shape, rng)?);
        let sn = spectral.then(|| SpectralNorm::new(&weight.value, rng));
        Ok(Self { weight, bias: Some(Param::new(Tensor::zeros(&[out_ch]))), sn })
    }

    pub fn conv2d(in_ch: usize, out_ch: usize, k: usize, spectral: bool, rng: &mut impl Rng) -> Result<Self> {
        Self::new(in_ch, out_ch, (1, k, k), spectral, rng)
    }

    pub fn conv3d(in_ch: usize, out_ch: usize, k: usize, spectral: bool, rng: &mut impl Rng) -> Result<Self> {
        Self::new(in_ch, out_ch, (k, k, k), spectral, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn kernel(&self) -> (usize, usize, usize) {
        let s = self.weight.value.shape();
        (s[2], s[3], s[4])
    }

    pub fn forward(&mut self, fwd: &mut Fwd<'_>, x: Var) -> Result<Var> {
        let s = fwd.tape.shape(x);
        if s.len() != 5 || s[2] != self.in_channels() {
            return Err(HvgError::Shape(format!(
                "conv expects [N,T,{},H,W], got {s:?}",
                self.in_channels()
            )));
        }
        let w = sn_weight(fwd, &self.weight, &mut self.sn);
        let y = fwd.tape.conv(x, w);
        Ok(match &self.bias {
            Some(b) => {
                let bv = fwd.tape.param(b);
                let bv = fwd.tape.reshape(bv, &[1, 1, self.out_channels(), 1, 1]);
                fwd.tape.add(y, bv)
            }
            None => y,
        })
    }

    pub fn zero(&mut self) {
        self.weight.value = Tensor::zeros(self.weight.value.shape());
        if let Some(b) = &mut self.bias {
            b.value = Tensor::zeros(b.value.shape());
        }
    }
}

impl Module for Conv {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.param("weight", &mut self.weight);
        if let Some(b) = &mut self.bias {
            v.param("bias", b);
        }
        v.opt_child("sn", self.sn.as_mut().map(|s| s as &mut dyn Module));
    }
}

/// `y = x Wᵀ + b` on `[B, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub sn: Option<SpectralNorm>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, spectral: bool, rng: &mut impl Rng) -> Result<Self> {
        let weight = Param::new(orthogonal_init(&[out_dim, in_dim], rng)?);
        let sn = spectral.then(|| SpectralNorm::new(&weight.value, rng));
        Ok(Self { weight, bias: Param::new(Tensor::zeros(&[out_dim])), sn })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn forward(&mut self, fwd: &mut Fwd<'_>, x: Var) -> Result<Var> {
        let s = fwd.tape.shape(x);
        if s.len() != 2 || s[1] != self.in_dim() {
            return Err(HvgError::Shape(format!("linear expects [B,{}], got {s:?}", self.in_dim())));
        }
        let w = sn_weight(fwd, &self.weight, &mut self.sn);
        let wt = fwd.tape.permute(w, &[1, 0]);
        let y = fwd.tape.matmul(x, wt);
        let b = fwd.tape.param(&self.bias);
        let b = fwd.tape.reshape(b, &[1, self.out_dim()]);
        Ok(fwd.tape.add(y, b))
    }

    pub fn zero(&mut self) {
        self.weight.value = Tensor::zeros(self.weight.value.shape());
        self.bias.value = Tensor::zeros(self.bias.value.shape());
    }
}

impl Module for Linear {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.param("weight", &mut self.weight);
        v.param("bias", &mut self.bias);
        v.opt_child("sn", self.sn.as_mut().map(|s| s as &mut dyn Module));
    }
}

/// Class-label lookup table `[classes, dim]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: Param,
    pub sn: Option<SpectralNorm>,
}

impl Embedding {
    pub fn new(classes: usize, dim: usize, spectral: bool, rng: &mut impl Rng) -> Result<Self> {
        let table = Param::new(orthogonal_init(&[classes, dim], rng)?);
        let sn = spectral.then(|| SpectralNorm::new(&table.value, rng));
        Ok(Self { table, sn })
    }

    pub fn classes(&self) -> usize {
        self.table.value.dim(0)
    }

    pub fn dim(&self) -> usize {
        self.table.value.dim(1)
    }

    pub fn forward(&mut self, fwd: &mut Fwd<'_>, labels: &[usize]) -> Result<Var> {
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.classes()) {
            return Err(HvgError::InvalidArgument(format!(
                "label {bad} out of range for {} classes",
                self.classes()
            )));
        }
        let t = sn_weight(fwd, &self.table, &mut self.sn);
        Ok(fwd.tape.index_select(t, 0, labels))
    }
}

impl Module for Embedding {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.param("table", &mut self.table);
        v.opt_child("sn", self.sn.as_mut().map(|s| s as &mut dyn Module));
    }
}
