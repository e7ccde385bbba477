use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{AdrlError, Result};
use crate::rng::standard_normal;

/// Distribution of one noise vector ξ_t. The same law applies at every
/// stage and draws are independent across stages.
#[derive(Clone, Debug)]
pub enum NoiseModel {
    /// Finite support, enumerable.
    Finite { support: Vec<Vec<f64>>, probs: Vec<f64> },
    /// `mean + factor * z` with `z` standard normal; `factor` is d×d row-major.
    Gaussian { mean: Vec<f64>, factor: Vec<f64>, dim: usize },
}

impl NoiseModel {
    pub fn finite(support: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(AdrlError::model("finite noise needs one probability per support point"));
        }
        let d = support[0].len();
        if support.iter().any(|p| p.len() != d) {
            return Err(AdrlError::model("finite noise support points differ in dimension"));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(AdrlError::model("negative noise probability"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(AdrlError::model(format!("noise probabilities sum to {total}, not 1")));
        }
        Ok(NoiseModel::Finite { support, probs })
    }

    /// Gaussian with the given covariance. The covariance must be symmetric
    /// positive semi-definite; a square-root factor is taken from its
    /// eigen-decomposition so singular covariances are allowed.
    pub fn gaussian(mean: Vec<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(AdrlError::model("covariance dimension does not match mean"));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(AdrlError::model("covariance has non-finite entries"));
        }
        let asym = (cov - cov.transpose()).abs().max();
        let scale = cov.abs().max().max(1.0);
        if asym > 1e-12 * scale {
            return Err(AdrlError::model("covariance is not symmetric"));
        }
        let eig = SymmetricEigen::new(cov.clone());
        let min_eig = eig.eigenvalues.min();
        if min_eig < -1e-12 * scale {
            return Err(AdrlError::model(format!(
                "covariance is not positive semi-definite (min eigenvalue {min_eig:e})"
            )));
        }
        let mut factor = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                factor[i * d + j] = eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt();
            }
        }
        Ok(NoiseModel::Gaussian { mean, factor, dim: d })
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseModel::Finite { support, .. } => support[0].len(),
            NoiseModel::Gaussian { dim, .. } => *dim,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, NoiseModel::Finite { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            NoiseModel::Finite { support, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = support.len() - 1;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                out.copy_from_slice(&support[pick]);
            }
            NoiseModel::Gaussian { mean, factor, dim } => {
                let d = *dim;
                let z: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
                for i in 0..d {
                    let row = &factor[i * d..(i + 1) * d];
                    out[i] = mean[i] + row.iter().zip(&z).map(|(f, z)| f * z).sum::<f64>();
                }
            }
        }
    }
}
