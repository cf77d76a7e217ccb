//! Complex Gaussian log-densities with a cached whitening factor.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, lower_inverse, CMat, CVec, C64};

/// `CN(μ, C)` with `C = L Lᴴ` cached as the packed rows of `L⁻¹`.
#[derive(Clone, Debug)]
pub struct GaussianDensity {
    mean: CVec,
    // row i holds entries 0..=i of row i of L⁻¹
    whitener: Vec<C64>,
    dim: usize,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: CVec, cov: &CMat) -> Result<Self> {
        let l = cholesky_lower(cov)
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>();
        Ok(Self::from_whitener(mean, &lower_inverse(&l), log_det))
    }

    /// `whitener` must be lower triangular with `whitenerᴴ whitener = C⁻¹`.
    pub fn from_whitener(mean: CVec, whitener: &CMat, log_det: f64) -> Self {
        let dim = mean.len();
        assert_eq!(whitener.shape(), (dim, dim));
        let mut packed = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in 0..=i {
                packed.push(whitener[(i, j)]);
            }
        }
        GaussianDensity {
            mean,
            whitener: packed,
            dim,
            log_norm: -(dim as f64) * PI.ln() - log_det,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &CVec {
        &self.mean
    }

    pub fn log_det(&self) -> f64 {
        -(self.dim as f64) * PI.ln() - self.log_norm
    }

    /// Whitened squared distance `(x−μ)ᴴ C⁻¹ (x−μ)`.
    pub fn mahalanobis(&self, x: &[C64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let diff: Vec<C64> = x.iter().zip(self.mean.iter()).map(|(a, b)| a - b).collect();
        let mut quad = 0.0;
        let mut offset = 0;
        for i in 0..self.dim {
            let row = &self.whitener[offset..offset + i + 1];
            let mut acc = C64::new(0.0, 0.0);
            for (w, d) in row.iter().zip(&diff[..=i]) {
                acc += w * d;
            }
            quad += acc.norm_sqr();
            offset += i + 1;
        }
        quad
    }

    pub fn log_pdf(&self, x: &[C64]) -> f64 {
        self.log_norm - self.mahalanobis(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{complex_normal_mat, complex_normal_vec, identity, inverse_hpd, log_det_hpd};
    use crate::rng::seeded;

    #[test]
    fn standard_normal_at_zero() {
        let d = GaussianDensity::new(CVec::zeros(1), &identity(1)).unwrap();
        assert!((d.log_pdf(&[C64::new(0.0, 0.0)]) - (1.0 / PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = seeded(21);
        let g = complex_normal_mat(&mut rng, 4, 4);
        let cov = &g * g.adjoint() + identity(4) * C64::new(0.1, 0.0);
        let mean = complex_normal_vec(&mut rng, 4, 1.0);
        let x = complex_normal_vec(&mut rng, 4, 1.0);
        let d = GaussianDensity::new(mean.clone(), &cov).unwrap();
        let diff = &x - &mean;
        let quad = (diff.adjoint() * inverse_hpd(&cov).unwrap() * &diff)[(0, 0)].re;
        let direct = -4.0 * PI.ln() - log_det_hpd(&cov).unwrap() - quad;
        assert!((d.log_pdf(x.as_slice()) - direct).abs() < 1e-10);
    }
}
