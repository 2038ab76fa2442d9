//! Weight initialisation.
//!
//! Weights of shape `[out, d1, d2, …]` are viewed as an `out × fan_in`
//! matrix with `fan_in = d1·d2·…` (row-major flattening). The same view is
//! used by spectral normalisation.

use hvg_tensor::Tensor;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{HvgError, Result};

pub fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    let out = shape.first().copied().unwrap_or(1);
    (out, shape.iter().skip(1).product())
}

/// Orthogonal matrix of the weight's `out × fan_in` view: orthonormal rows
/// when `out ≤ fan_in`, orthonormal columns otherwise.
pub fn orthogonal_init(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(HvgError::InvalidArgument(format!("cannot orthogonally initialise shape {shape:?}")));
    }
    let (rows, cols) = matrix_dims(shape);
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::<f64>::from_fn(tall, short, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // sign fix makes the distribution uniform (Haar)
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let data: Vec<f64> = if rows >= cols {
        (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect()
    } else {
        (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| q[(j, i)]).collect()
    };
    Ok(Tensor::new(shape, data))
}

/// Random unit vector of length `n`.
pub fn unit_vector(n: usize, rng: &mut impl Rng) -> Tensor {
    loop {
        let t = Tensor::from_fn(&[n], |_| rng.sample(StandardNormal));
        let norm = t.norm();
        if norm > 1e-6 {
            return t.scale(1.0 / norm);
        }
    }
}
