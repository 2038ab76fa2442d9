//! Spectral normalisation by power iteration.

use hvg_tensor::{Param, Tensor, Var};
use rand::Rng;

use super::init::{matrix_dims, unit_vector};
use super::module::{Fwd, Mode, Module, Visitor};

/// Lower clamp for the singular value estimate; an all-zero weight is
/// divided by this instead of by zero.
pub const SIGMA_EPS: f64 = 1e-12;

/// Persistent power-iteration vectors of one weight matrix.
#[derive(Clone, Debug)]
pub struct SpectralState {
    /// Left vector, length `out`.
    pub u: Tensor,
    /// Right vector, length `fan_in`.
    pub v: Tensor,
    pub iterations: usize,
}

impl SpectralState {
    pub fn new(weight_shape: &[usize], rng: &mut impl Rng) -> Self {
        let (r, c) = matrix_dims(weight_shape);
        Self { u: unit_vector(r, rng), v: unit_vector(c, rng), iterations: 1 }
    }

    /// One round of `v ← Wᵀu/‖Wᵀu‖`, `u ← Wv/‖Wv‖`. A vector whose update
    /// has norm below [`SIGMA_EPS`] keeps its previous value.
    pub fn power_iterate(&mut self, w: &Tensor) {
        let (r, c) = matrix_dims(w.shape());
        let m = w.data();
        let mut v = vec![0.0; c];
        for i in 0..r {
            let ui = self.u.data()[i];
            for (j, vj) in v.iter_mut().enumerate() {
                *vj += m[i * c + j] * ui;
            }
        }
        if let Some(v) = normalized(v) {
            self.v = Tensor::new(&[c], v);
        }
        let vd = self.v.data();
        let u: Vec<f64> = (0..r).map(|i| (0..c).map(|j| m[i * c + j] * vd[j]).sum()).collect();
        if let Some(u) = normalized(u) {
            self.u = Tensor::new(&[r], u);
        }
    }

    /// `uᵀ W v`.
    pub fn sigma(&self, w: &Tensor) -> f64 {
        let (r, c) = matrix_dims(w.shape());
        let m = w.data();
        let (u, v) = (self.u.data(), self.v.data());
        (0..r).map(|i| u[i] * (0..c).map(|j| m[i * c + j] * v[j]).sum::<f64>()).sum()
    }
}

fn normalized(mut x: Vec<f64>) -> Option<Vec<f64>> {
    let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n < SIGMA_EPS {
        return None;
    }
    x.iter_mut().for_each(|a| *a /= n);
    Some(x)
}

/// `W / σ̂` after advancing `state` by its iteration count. Returns the
/// normalised weight and the estimate `σ̂` (clamped below by
/// [`SIGMA_EPS`]).
pub fn spectral_normalize(w: &Tensor, state: &mut SpectralState) -> (Tensor, f64) {
    for _ in 0..state.iterations {
        state.power_iterate(w);
    }
    let s = state.sigma(w).max(SIGMA_EPS);
    (w.scale(1.0 / s), s)
}

/// Spectral normalisation attached to one weight.
#[derive(Clone, Debug)]
pub struct SpectralNorm {
    pub state: SpectralState,
}

/// Power iterations run when a layer is built, so the estimate is usable
/// before the first training step.
pub const WARMUP_ITERATIONS: usize = 15;

impl SpectralNorm {
    pub fn new(weight: &Tensor, rng: &mut impl Rng) -> Self {
        let mut state = SpectralState::new(weight.shape(), rng);
        for _ in 0..WARMUP_ITERATIONS {
            state.power_iterate(weight);
        }
        Self { state }
    }

    /// Puts `w / σ̂(w)` on the tape. `σ̂ = uᵀWv` is differentiated through
    /// `W` with `u`, `v` treated as constants. Vectors advance in train
    /// mode only.
    pub fn apply(&mut self, fwd: &mut Fwd<'_>, w: &Param) -> Var {
        if fwd.mode == Mode::Train {
            for _ in 0..self.state.iterations {
                self.state.power_iterate(&w.value);
            }
        }
        let tape = &mut *fwd.tape;
        let wv = tape.param(w);
        let (r, c) = matrix_dims(w.value.shape());
        if self.state.sigma(&w.value) < SIGMA_EPS {
            return tape.scale(wv, 1.0 / SIGMA_EPS);
        }
        let wm = tape.reshape(wv, &[r, c]);
        let v = tape.constant(self.state.v.clone().reshape(&[c, 1]));
        let u = tape.constant(self.state.u.clone().reshape(&[r, 1]));
        let wvv = tape.matmul(wm, v);
        let prod = tape.mul(wvv, u);
        let s = tape.sum_all(prod);
        let inv = tape.powf(s, -1.0);
        tape.mul(wv, inv)
    }
}

impl Module for SpectralNorm {
    fn visit(&mut self, v: &mut Visitor<'_>) {
        v.buffer("u", &mut self.state.u);
        v.buffer("v", &mut self.state.v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::new(&[2, 2], vec![2.0, 0.0, 0.0, 1.0]);
        let mut st = SpectralState::new(&[2, 2], &mut rng);
        for _ in 0..60 {
            st.power_iterate(&w);
        }
        let (wn, s) = spectral_normalize(&w, &mut st);
        assert!((s - 2.0).abs() < 1e-12);
        assert!(wn.max_abs_diff(&Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.5])) < 1e-12);

        let q = super::super::init::orthogonal_init(&[4, 4], &mut rng).unwrap();
        let mut st = SpectralState::new(&[4, 4], &mut rng);
        let (qn, s) = spectral_normalize(&q, &mut st);
        assert!((s - 1.0).abs() < 1e-9);
        assert!(qn.max_abs_diff(&q) < 1e-9);
    }

    #[test]
    fn random_matrix_against_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Tensor::from_fn(&[5, 7], |_| rng.random_range(-1.0..1.0));
        let mut st = SpectralState::new(&[5, 7], &mut rng);
        for _ in 0..49 {
            st.power_iterate(&w);
        }
        let (wn, _) = spectral_normalize(&w, &mut st);
        let svd = DMatrix::from_row_slice(5, 7, wn.data()).singular_values();
        let top = svd.max();
        assert!((1.0 - 1e-3..=1.0 + 1e-3).contains(&top), "top = {top}");
        let u = st.u.norm();
        let v = st.v.norm();
        assert!((u - 1.0).abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_is_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Tensor::zeros(&[3, 4]);
        let mut st = SpectralState::new(&[3, 4], &mut rng);
        let before = st.u.clone();
        let (wn, s) = spectral_normalize(&w, &mut st);
        assert_eq!(s, SIGMA_EPS);
        assert!(wn.data().iter().all(|&x| x == 0.0));
        assert_eq!(st.u, before);
    }
}
