use std::fmt;

use crate::error::{Result, TensorError};

/// Dense row-major `f64` array.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes (right aligned, size-1 dims stretch).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` when viewed as broadcast into `out` (0 on stretched dims).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                s[i - off]
            }
        })
        .collect()
}

/// Visits every element of `out_shape`, passing (out offset, a offset, b offset).
fn walk2(out_shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let nd = out_shape.len();
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    if numel(out_shape) == 0 {
        return;
    }
    let inner = out_shape[nd - 1];
    let (ia, ib) = (sa[nd - 1], sb[nd - 1]);
    let outer = numel(&out_shape[..nd - 1]);
    let mut idx = vec![0usize; nd - 1];
    let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
    for _ in 0..outer {
        for j in 0..inner {
            f(o + j, oa + j * ia, ob + j * ib);
        }
        o += inner;
        for d in (0..nd - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        Self::try_new(shape, data).expect("tensor data length does not match shape")
    }

    pub fn try_new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; numel(shape)] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        Self { shape: shape.to_vec(), data: (0..numel(shape)).map(f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Element at a multi-index.
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len());
        let mut o = 0;
        for (i, (&x, &d)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(x < d, "index {x} out of bounds for axis {i} of size {d}");
            o = o * d + x;
        }
        o
    }

    pub fn reshape(self, shape: &[usize]) -> Self {
        assert_eq!(
            numel(shape),
            self.data.len(),
            "cannot reshape {:?} into {:?}",
            self.shape,
            shape
        );
        Self { shape: shape.to_vec(), data: self.data }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise binary op with broadcasting.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Self { shape: self.shape.clone(), data };
        }
        let out = broadcast_shape(&self.shape, &other.shape).unwrap_or_else(|| {
            panic!("shapes {:?} and {:?} do not broadcast", self.shape, other.shape)
        });
        let sa = broadcast_strides(&self.shape, &out);
        let sb = broadcast_strides(&other.shape, &out);
        let mut data = vec![0.0; numel(&out)];
        walk2(&out, &sa, &sb, |o, a, b| data[o] = f(self.data[a], other.data[b]));
        Self { shape: out, data }
    }

    pub fn add(&self, other: &Tensor) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    /// In-place `self += other` for equal shapes.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Sums broadcast dimensions away so the result has `target` shape.
    pub fn sum_to(&self, target: &[usize]) -> Self {
        if self.shape == target {
            return self.clone();
        }
        let ok = broadcast_shape(target, &self.shape).map(|s| s == self.shape).unwrap_or(false);
        assert!(ok, "cannot sum {:?} down to {:?}", self.shape, target);
        let st = broadcast_strides(target, &self.shape);
        let zero = vec![0; self.shape.len()];
        let mut data = vec![0.0; numel(target)];
        walk2(&self.shape, &st, &zero, |o, t, _| data[t] += self.data[o]);
        Self { shape: target.to_vec(), data }
    }

    /// Broadcasts `self` up to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        let ok = broadcast_shape(&self.shape, shape).map(|s| s == shape).unwrap_or(false);
        assert!(ok, "cannot expand {:?} to {:?}", self.shape, shape);
        let ss = broadcast_strides(&self.shape, shape);
        let zero = vec![0; shape.len()];
        let mut data = vec![0.0; numel(shape)];
        walk2(shape, &ss, &zero, |o, s, _| data[o] = self.data[s]);
        Self { shape: shape.to_vec(), data }
    }

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum_axes(&self, axes: &[usize]) -> Self {
        let mut target = self.shape.clone();
        for &a in axes {
            target[a] = 1;
        }
        self.sum_to(&target)
    }

    pub fn permute(&self, axes: &[usize]) -> Self {
        assert_eq!(axes.len(), self.shape.len(), "permute axes rank mismatch");
        let mut seen = vec![false; axes.len()];
        for &a in axes {
            assert!(a < axes.len() && !seen[a], "invalid permutation {axes:?}");
            seen[a] = true;
        }
        let s = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| s[a]).collect();
        let zero = vec![0; axes.len()];
        let mut data = vec![0.0; self.data.len()];
        walk2(&out_shape, &src_strides, &zero, |o, src, _| data[o] = self.data[src]);
        Self { shape: out_shape, data }
    }

    fn split_at_axis(&self, axis: usize) -> (usize, usize, usize) {
        assert!(axis < self.shape.len(), "axis {axis} out of range for {:?}", self.shape);
        (numel(&self.shape[..axis]), self.shape[axis], numel(&self.shape[axis + 1..]))
    }

    /// Gathers `indices` along `axis` (indices may repeat).
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Self {
        let (outer, dim, inner) = self.split_at_axis(axis);
        let mut shape = self.shape.clone();
        shape[axis] = indices.len();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                assert!(i < dim, "index {i} out of range for axis of size {dim}");
                let start = (o * dim + i) * inner;
                data.extend_from_slice(&self.data[start..start + inner]);
            }
        }
        Self { shape, data }
    }

    /// Adjoint of `index_select`: scatter-adds `self` into a zero tensor whose
    /// `axis` has size `dim`.
    pub fn index_add(&self, axis: usize, indices: &[usize], dim: usize) -> Self {
        let (outer, n, inner) = self.split_at_axis(axis);
        assert_eq!(n, indices.len());
        let mut shape = self.shape.clone();
        shape[axis] = dim;
        let mut data = vec![0.0; outer * dim * inner];
        for o in 0..outer {
            for (k, &i) in indices.iter().enumerate() {
                let src = (o * n + k) * inner;
                let dst = (o * dim + i) * inner;
                for j in 0..inner {
                    data[dst + j] += self.data[src + j];
                }
            }
        }
        Self { shape, data }
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Self {
        assert!(start + len <= self.shape[axis], "narrow out of range");
        let idx: Vec<usize> = (start..start + len).collect();
        self.index_select(axis, &idx)
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0].shape();
        for p in parts {
            assert_eq!(p.ndim(), first.len(), "concat rank mismatch");
            for (d, (&a, &b)) in p.shape().iter().zip(first).enumerate() {
                assert!(d == axis || a == b, "concat shape mismatch {:?} vs {:?}", p.shape(), first);
            }
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut shape = first.to_vec();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Self { shape, data }
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Self {
        assert!(self.ndim() == 2 && other.ndim() == 2, "matmul needs 2-D operands");
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, (k, 1), &other.data, (n, 1), &mut out, false);
        Self { shape: vec![m, n], data: out }
    }

    pub fn transpose2(&self) -> Self {
        assert_eq!(self.ndim(), 2);
        self.permute(&[1, 0])
    }

    /// Mean over non-overlapping `k`×`k` blocks of the last two axes.
    ///
    /// Each block is averaged as `a + Σ(x − a) / k²` with `a` its top-left
    /// element, which is the plain mean algebraically and reproduces
    /// constant blocks exactly.
    pub fn avg_pool(&self, k: usize) -> Self {
        let nd = self.ndim();
        assert!(nd >= 2, "avg_pool needs at least 2 dims");
        let (h, w) = (self.shape[nd - 2], self.shape[nd - 1]);
        assert!(k > 0 && h % k == 0 && w % k == 0, "avg_pool: {h}x{w} not divisible by {k}");
        let (ho, wo) = (h / k, w / k);
        let m = numel(&self.shape[..nd - 2]);
        let n = (k * k) as f64;
        let mut data = vec![0.0; m * ho * wo];
        for p in 0..m {
            let src = &self.data[p * h * w..(p + 1) * h * w];
            let dst = &mut data[p * ho * wo..(p + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let a = src[oy * k * w + ox * k];
                    let mut s = 0.0;
                    for dy in 0..k {
                        let row = &src[(oy * k + dy) * w + ox * k..(oy * k + dy) * w + ox * k + k];
                        for v in row {
                            s += v - a;
                        }
                    }
                    dst[oy * wo + ox] = a + s / n;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[nd - 2] = ho;
        shape[nd - 1] = wo;
        Self { shape, data }
    }

    /// Adjoint of `avg_pool`.
    pub(crate) fn avg_pool_backward(&self, k: usize) -> Self {
        let nd = self.ndim();
        let (ho, wo) = (self.shape[nd - 2], self.shape[nd - 1]);
        let (h, w) = (ho * k, wo * k);
        let m = numel(&self.shape[..nd - 2]);
        let inv = 1.0 / (k * k) as f64;
        let mut data = vec![0.0; m * h * w];
        for p in 0..m {
            let src = &self.data[p * ho * wo..(p + 1) * ho * wo];
            let dst = &mut data[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    dst[y * w + x] = src[(y / k) * wo + x / k] * inv;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[nd - 2] = h;
        shape[nd - 1] = w;
        Self { shape, data }
    }
}

/// `c = a·b` (or `c += a·b` when `accumulate`) for strided row-major views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover every strided element addressed by the
    // dimensions and strides passed in; callers guarantee this layout.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
