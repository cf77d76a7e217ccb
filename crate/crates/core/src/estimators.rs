//! Downlink channel estimators: mixture of LMMSE filters from an adapted
//! GMM, sample-covariance LMMSE and genie-aided OMP.

use nalgebra::QR;

use crate::channel::ChannelDataset;
use crate::error::{Error, Result};
use crate::gmm::{responsibilities, AdaptedGmm};
use crate::linalg::{hermitize, identity, kron, solve_hpd, CMat, CVec, C64};

/// `Σ_k p(k|y) [G_k (y − A μ_k) + μ_k]` with the per-component LMMSE filters.
pub fn estimate_gmm(adapted: &AdaptedGmm, y: &CVec) -> Result<CVec> {
    let resp = responsibilities(adapted, y)?;
    let filters = adapted.filters()?;
    let base = adapted.base();
    let mut h = CVec::zeros(base.dim());
    for (k, &r) in resp.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let innov = y - &adapted.means_y()[k];
        h += (&filters[k] * innov + &base.means()[k]) * C64::new(r, 0.0);
    }
    Ok(h)
}

/// `(1/M) Σ h hᴴ` over the vectorized channels.
pub fn sample_covariance(ds: &ChannelDataset) -> Result<CMat> {
    sample_covariance_of(&ds.vectors())
}

pub fn sample_covariance_of(data: &[CVec]) -> Result<CMat> {
    let first = data.first().ok_or_else(|| Error::arg("sample covariance of an empty set"))?;
    let n = first.len();
    let mut c = CMat::zeros(n, n);
    for h in data {
        c.ger(C64::new(1.0, 0.0), h, &h.conjugate(), C64::new(1.0, 0.0));
    }
    c /= C64::new(data.len() as f64, 0.0);
    hermitize(&mut c);
    Ok(c)
}

/// Precomputed `C Aᴴ (A C Aᴴ + σ² I)⁻¹`.
#[derive(Clone, Debug)]
pub struct LmmseEstimator {
    filter: CMat,
}

impl LmmseEstimator {
    pub fn new(c: &CMat, a: &CMat, sigma2: f64) -> Result<Self> {
        if c.nrows() != c.ncols() || a.ncols() != c.nrows() {
            return Err(Error::arg("covariance and operator dimensions do not match"));
        }
        if !(sigma2 >= 0.0) {
            return Err(Error::arg("noise variance must be non-negative"));
        }
        let ac = a * c;
        let mut s = &ac * a.adjoint() + identity(a.nrows()) * C64::new(sigma2, 0.0);
        hermitize(&mut s);
        let filter = solve_hpd(&s, &ac)?.adjoint();
        Ok(LmmseEstimator { filter })
    }

    pub fn filter(&self) -> &CMat {
        &self.filter
    }

    pub fn estimate(&self, y: &CVec) -> Result<CVec> {
        if y.len() != self.filter.ncols() {
            return Err(Error::arg("observation length does not match the estimator"));
        }
        Ok(&self.filter * y)
    }
}

pub fn estimate_lmmse(c_s: &CMat, a: &CMat, sigma2: f64, y: &CVec) -> Result<CVec> {
    LmmseEstimator::new(c_s, a, sigma2)?.estimate(y)
}

/// Oversampled DFT dictionary matching the column-major channel
/// vectorization: `D = (D_tx,h ⊗ D_tx,v) ⊗ D_rx` with unit-norm columns.
#[derive(Clone, Debug)]
pub struct Dictionary {
    pub matrix: CMat,
    /// `(rx, tx_h, tx_v)`.
    pub oversampling: (usize, usize, usize),
}

/// `n × (factor·n)` grid of ULA responses `e^{jπ k u}/√n`, `u` uniform on `[−1, 1)`.
pub fn oversampled_dft(n: usize, factor: usize) -> CMat {
    let g = n * factor;
    let s = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, g, |k, col| {
        let u = -1.0 + 2.0 * col as f64 / g as f64;
        C64::from_polar(s, std::f64::consts::PI * k as f64 * u)
    })
}

impl Dictionary {
    pub fn new(nrx: usize, ntx_h: usize, ntx_v: usize, oversampling: (usize, usize, usize)) -> Result<Self> {
        let (o_rx, o_h, o_v) = oversampling;
        if o_rx == 0 || o_h == 0 || o_v == 0 {
            return Err(Error::Config("dictionary oversampling factors must be positive".into()));
        }
        if nrx == 0 || ntx_h == 0 || ntx_v == 0 {
            return Err(Error::Config("dictionary needs non-empty arrays".into()));
        }
        let d_tx = kron(&oversampled_dft(ntx_h, o_h), &oversampled_dft(ntx_v, o_v));
        let matrix = kron(&d_tx, &oversampled_dft(nrx, o_rx));
        Ok(Dictionary { matrix, oversampling })
    }

    /// Arbitrary dictionary; columns are rescaled to unit norm.
    pub fn from_matrix(mut matrix: CMat) -> Result<Self> {
        for j in 0..matrix.ncols() {
            let norm = matrix.column(j).norm();
            if !(norm > 0.0) {
                return Err(Error::Config(format!("dictionary column {j} is zero")));
            }
            matrix.column_mut(j).unscale_mut(norm);
        }
        Ok(Dictionary {
            matrix,
            oversampling: (1, 1, 1),
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Greedy support of size `s` for `y ≈ Φ t`; also returns the least-squares
/// coefficients after each step. Atoms with zero norm are never chosen.
pub fn omp_path(phi: &CMat, y: &CVec, s: usize) -> Result<Vec<(Vec<usize>, CVec)>> {
    let norms: Vec<f64> = (0..phi.ncols()).map(|j| phi.column(j).norm()).collect();
    let mut support: Vec<usize> = Vec::with_capacity(s);
    let mut residual = y.clone();
    let mut path = Vec::with_capacity(s);
    for _ in 0..s {
        let corr = phi.ad_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (j, &nj) in norms.iter().enumerate() {
            if nj == 0.0 || support.contains(&j) {
                continue;
            }
            let score = corr[j].norm() / nj;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        let Some((j, _)) = best else { break };
        support.push(j);
        let sub = CMat::from_fn(phi.nrows(), support.len(), |i, c| phi[(i, support[c])]);
        let coef = least_squares(&sub, y)?;
        residual = y - &sub * &coef;
        path.push((support.clone(), coef));
    }
    Ok(path)
}

fn least_squares(a: &CMat, y: &CVec) -> Result<CVec> {
    let qr = QR::new(a.clone());
    let r = qr.r();
    let mut rhs = qr.q().ad_mul(y);
    if !r.solve_upper_triangular_mut(&mut rhs) {
        return Err(Error::Numerical("rank-deficient OMP support".into()));
    }
    Ok(rhs)
}

/// Genie-aided OMP: runs OMP on `A D` for sparsities `1..=s_max` and keeps
/// the reconstruction `D t` closest to `h_true`. Returns the estimate and
/// the chosen sparsity.
pub fn estimate_omp_genie(dict: &Dictionary, a: &CMat, y: &CVec, h_true: &CVec, s_max: usize) -> Result<(CVec, usize)> {
    let phi = a * &dict.matrix;
    estimate_omp_genie_with(&dict.matrix, &phi, y, h_true, s_max)
}

/// As [`estimate_omp_genie`] with the effective dictionary `phi = A D` precomputed.
pub fn estimate_omp_genie_with(d: &CMat, phi: &CMat, y: &CVec, h_true: &CVec, s_max: usize) -> Result<(CVec, usize)> {
    if s_max == 0 || s_max > phi.nrows() {
        return Err(Error::arg(format!("s_max must lie in 1..={}", phi.nrows())));
    }
    if y.len() != phi.nrows() || h_true.len() != d.nrows() {
        return Err(Error::arg("dimension mismatch in OMP"));
    }
    let mut best: Option<(CVec, usize, f64)> = None;
    for (support, coef) in omp_path(phi, y, s_max)? {
        let mut h = CVec::zeros(d.nrows());
        for (c, &j) in support.iter().enumerate() {
            h += d.column(j) * coef[c];
        }
        let err = (&h - h_true).norm_squared();
        if best.as_ref().is_none_or(|b| err < b.2) {
            best = Some((h, support.len(), err));
        }
    }
    let (h, s, _) = best.ok_or_else(|| Error::Config("effective dictionary has no usable atoms".into()))?;
    Ok((h, s))
}
