//! Stride-1 "same" convolutions over `[N, T, C, H, W]` volumes.
//!
//! Weights are `[O, C, kt, kh, kw]` with odd kernel extents; zero padding of
//! `k / 2` on every axis keeps `T`, `H` and `W` unchanged. A 2-D convolution is
//! the `kt = 1` case, so frames never mix. The output layout is
//! `[N, T, O, H, W]`. Each sample is lowered to a `[C·kt·kh·kw, T·H·W]` column
//! matrix and multiplied by the weight viewed as `[O, C·kt·kh·kw]`.

use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub t: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], wt: &[usize]) -> Self {
        assert_eq!(x.len(), 5, "conv input must be [N, T, C, H, W], got {x:?}");
        assert_eq!(wt.len(), 5, "conv weight must be [O, C, kt, kh, kw], got {wt:?}");
        assert_eq!(x[2], wt[1], "conv channel mismatch: input {} vs weight {}", x[2], wt[1]);
        for &k in &wt[2..] {
            assert!(k % 2 == 1, "conv kernels must be odd, got {wt:?}");
        }
        Self { n: x[0], t: x[1], c: x[2], h: x[3], w: x[4], o: wt[0], kt: wt[2], kh: wt[3], kw: wt[4] }
    }

    fn k(&self) -> usize {
        self.c * self.kt * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.t * self.h * self.w
    }
}

/// Lowers sample `xs` (`[T, C, H, W]`, contiguous) into `cols` (`[K, P]`).
fn im2col(g: &ConvGeom, xs: &[f64], cols: &mut [f64]) {
    let (pt, ph, pw) = ((g.kt / 2) as isize, (g.kh / 2) as isize, (g.kw / 2) as isize);
    let hw = g.h * g.w;
    let p = g.p();
    let mut row = 0;
    for c in 0..g.c {
        for dt in 0..g.kt {
            for dh in 0..g.kh {
                for dw in 0..g.kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let ot = dt as isize - pt;
                    let oh = dh as isize - ph;
                    let ow = dw as isize - pw;
                    for t in 0..g.t {
                        let st = t as isize + ot;
                        let drow = &mut dst[t * hw..(t + 1) * hw];
                        if st < 0 || st >= g.t as isize {
                            drow.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let base = (st as usize * g.c + c) * hw;
                        for y in 0..g.h {
                            let sy = y as isize + oh;
                            let d = &mut drow[y * g.w..(y + 1) * g.w];
                            if sy < 0 || sy >= g.h as isize {
                                d.iter_mut().for_each(|v| *v = 0.0);
                                continue;
                            }
                            let src = &xs[base + sy as usize * g.w..base + (sy as usize + 1) * g.w];
                            for (x, dv) in d.iter_mut().enumerate() {
                                let sx = x as isize + ow;
                                *dv = if sx < 0 || sx >= g.w as isize { 0.0 } else { src[sx as usize] };
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-adds `cols` back into `gx` (`[T, C, H, W]`).
fn col2im(g: &ConvGeom, cols: &[f64], gx: &mut [f64]) {
    let (pt, ph, pw) = ((g.kt / 2) as isize, (g.kh / 2) as isize, (g.kw / 2) as isize);
    let hw = g.h * g.w;
    let p = g.p();
    let mut row = 0;
    for c in 0..g.c {
        for dt in 0..g.kt {
            for dh in 0..g.kh {
                for dw in 0..g.kw {
                    let srow = &cols[row * p..(row + 1) * p];
                    let ot = dt as isize - pt;
                    let oh = dh as isize - ph;
                    let ow = dw as isize - pw;
                    for t in 0..g.t {
                        let st = t as isize + ot;
                        if st < 0 || st >= g.t as isize {
                            continue;
                        }
                        let base = (st as usize * g.c + c) * hw;
                        for y in 0..g.h {
                            let sy = y as isize + oh;
                            if sy < 0 || sy >= g.h as isize {
                                continue;
                            }
                            let s = &srow[t * hw + y * g.w..t * hw + (y + 1) * g.w];
                            let dst = &mut gx[base + sy as usize * g.w..base + (sy as usize + 1) * g.w];
                            for (x, v) in s.iter().enumerate() {
                                let sx = x as isize + ow;
                                if sx >= 0 && sx < g.w as isize {
                                    dst[sx as usize] += v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `[O, P]` (o-major) -> `[T, O, H·W]` sample layout.
fn scatter_out(g: &ConvGeom, res: &[f64], out: &mut [f64]) {
    let hw = g.h * g.w;
    let p = g.p();
    for o in 0..g.o {
        for t in 0..g.t {
            let src = &res[o * p + t * hw..o * p + (t + 1) * hw];
            out[(t * g.o + o) * hw..(t * g.o + o + 1) * hw].copy_from_slice(src);
        }
    }
}

fn gather_out(g: &ConvGeom, gout: &[f64], res: &mut [f64]) {
    let hw = g.h * g.w;
    let p = g.p();
    for o in 0..g.o {
        for t in 0..g.t {
            res[o * p + t * hw..o * p + (t + 1) * hw]
                .copy_from_slice(&gout[(t * g.o + o) * hw..(t * g.o + o + 1) * hw]);
        }
    }
}

pub(crate) fn conv_forward(x: &Tensor, w: &Tensor) -> Tensor {
    let g = ConvGeom::new(x.shape(), w.shape());
    let (k, p) = (g.k(), g.p());
    let in_len = g.t * g.c * g.h * g.w;
    let out_len = g.t * g.o * g.h * g.w;
    let mut out = vec![0.0; g.n * out_len];
    let mut cols = vec![0.0; k * p];
    let mut res = vec![0.0; g.o * p];
    for n in 0..g.n {
        im2col(&g, &x.data()[n * in_len..(n + 1) * in_len], &mut cols);
        gemm(g.o, k, p, w.data(), (k, 1), &cols, (p, 1), &mut res, false);
        scatter_out(&g, &res, &mut out[n * out_len..(n + 1) * out_len]);
    }
    Tensor::new(&[g.n, g.t, g.o, g.h, g.w], out)
}

/// Returns (grad wrt input, grad wrt weight); either may be skipped.
pub(crate) fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let g = ConvGeom::new(x.shape(), w.shape());
    let (k, p) = (g.k(), g.p());
    let in_len = g.t * g.c * g.h * g.w;
    let out_len = g.t * g.o * g.h * g.w;
    let mut gx = if need_x { Some(vec![0.0; x.numel()]) } else { None };
    let mut gw = if need_w { Some(vec![0.0; w.numel()]) } else { None };
    let mut cols = vec![0.0; k * p];
    let mut res = vec![0.0; g.o * p];
    for n in 0..g.n {
        gather_out(&g, &gout.data()[n * out_len..(n + 1) * out_len], &mut res);
        if let Some(gw) = gw.as_mut() {
            im2col(&g, &x.data()[n * in_len..(n + 1) * in_len], &mut cols);
            // gw[O, K] += res[O, P] · colsᵀ[P, K]
            gemm(g.o, p, k, &res, (p, 1), &cols, (1, p), gw, true);
        }
        if let Some(gx) = gx.as_mut() {
            // cols[K, P] = wᵀ[K, O] · res[O, P]
            gemm(k, g.o, p, w.data(), (1, k), &res, (p, 1), &mut cols, false);
            col2im(&g, &cols, &mut gx[n * in_len..(n + 1) * in_len]);
        }
    }
    (gx.map(|d| Tensor::new(x.shape(), d)), gw.map(|d| Tensor::new(w.shape(), d)))
}
