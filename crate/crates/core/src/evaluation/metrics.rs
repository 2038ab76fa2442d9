//! Fréchet distance between Gaussians and the inception score.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{HvgError, Result};

/// Eigenvalues of a covariance product below `−NEG_EIG_TOL · (1 + λ_max)`
/// mean the inputs were not positive semidefinite; smaller negative values
/// are rounding noise and are clipped to zero.
pub const NEG_EIG_TOL: f64 = 1e-8;

/// Mean, covariance (unbiased) and sample count of feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub cov: Vec<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn from_features(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(HvgError::InvalidArgument(format!("need at least 2 samples for a covariance, got {n}")));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(HvgError::Shape("feature rows must share a positive dimension".into()));
        }
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let mut cov = vec![0.0; d * d];
        for r in rows {
            for i in 0..d {
                let di = r[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (r[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / (n - 1) as f64;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok(Self { mean, cov, count: n })
    }

    /// Stats with the given moments, checked for symmetry.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(HvgError::Shape(format!("covariance of a {d}-dim mean needs {} entries", d * d)));
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (cov[i * d + j], cov[j * d + i]);
                if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
                    return Err(HvgError::InvalidArgument(format!("covariance is not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { mean, cov, count })
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.cov)
    }
}

fn clipped_eigen(m: DMatrix<f64>, what: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sym = (&m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let top = e.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    if let Some(&low) = e.eigenvalues.iter().find(|&&l| l < -NEG_EIG_TOL * (1.0 + top)) {
        return Err(HvgError::InvalidArgument(format!("{what} is not positive semidefinite (eigenvalue {low:e})")));
    }
    Ok((e.eigenvalues.map(|l| l.max(0.0)), e.eigenvectors))
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa Σb)^{1/2})`, with the trace of the
/// square root taken as `Σ √λ` over the eigenvalues of the symmetric
/// `Σa^{1/2} Σb Σa^{1/2}`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(HvgError::Shape(format!("cannot compare {}-dim and {}-dim statistics", a.dim(), b.dim())));
    }
    let mu: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let (sa, sb) = (a.cov_matrix(), b.cov_matrix());
    let (la, va) = clipped_eigen(sa.clone(), "first covariance")?;
    let root_a = &va * DMatrix::from_diagonal(&la.map(f64::sqrt)) * va.transpose();
    let (lm, _) = clipped_eigen(&root_a * &sb * &root_a, "covariance product")?;
    let tr_sqrt: f64 = lm.iter().map(|l| l.sqrt()).sum();
    Ok((mu + sa.trace() + sb.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// `exp(mean_n KL(p(y|x_n) ‖ p(y)))` with `p(y)` the mean row. Rows must
/// be probability vectors to within `1e-5`.
pub fn inception_score(probs: &[Vec<f64>]) -> Result<f64> {
    let n = probs.len();
    if n == 0 {
        return Err(HvgError::InvalidArgument("inception score of no samples".into()));
    }
    let c = probs[0].len();
    for (i, p) in probs.iter().enumerate() {
        let s: f64 = p.iter().sum();
        if p.len() != c || p.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-5 {
            return Err(HvgError::InvalidArgument(format!("row {i} is not a probability vector")));
        }
    }
    let mut marginal = vec![0.0; c];
    for p in probs {
        for (m, v) in marginal.iter_mut().zip(p) {
            *m += v / n as f64;
        }
    }
    let kl: f64 = probs
        .iter()
        .map(|p| p.iter().zip(&marginal).filter(|(&v, _)| v > 0.0).map(|(&v, &m)| v * (v / m).ln()).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    Ok(kl.exp())
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &[Vec<f64>]) -> Vec<Vec<f64>> {
    logits
        .iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}
