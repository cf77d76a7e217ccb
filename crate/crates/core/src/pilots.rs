//! 2D-DFT pilot matrices and the vectorized observation model
//! `y = A h + n` with `A = Pᵀ ⊗ I_{N_rx}`.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{complex_normal_vec, identity, kron, vec_of, CMat, CVec, C64};

/// Unitary DFT matrix, `F[m, k] = exp(−2πj mk / n) / √n`.
pub fn dft_matrix(n: usize) -> CMat {
    let s = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, n, |m, k| {
        C64::from_polar(s, -2.0 * PI * ((m * k) % n) as f64 / n as f64)
    })
}

/// Column indices `⌊i·N_tx / n_p⌋` of the full 2D-DFT used as pilots.
pub fn pilot_columns(ntx: usize, n_p: usize) -> Vec<usize> {
    (0..n_p).map(|i| i * ntx / n_p).collect()
}

/// `N_tx × n_p` pilot matrix: strided columns of `F_h ⊗ F_v`, each column
/// rescaled to squared norm `rho`.
pub fn build_pilot_matrix(ntx_h: usize, ntx_v: usize, n_p: usize, rho: f64) -> Result<CMat> {
    let ntx = ntx_h * ntx_v;
    if ntx == 0 {
        return Err(Error::arg("empty transmit array"));
    }
    if n_p == 0 || n_p > ntx {
        return Err(Error::arg(format!("n_p = {n_p} must lie in 1..={ntx}")));
    }
    if !(rho > 0.0) {
        return Err(Error::arg("rho must be positive"));
    }
    let full = kron(&dft_matrix(ntx_h), &dft_matrix(ntx_v));
    let cols = pilot_columns(ntx, n_p);
    let mut p = CMat::zeros(ntx, n_p);
    for (dst, &src) in cols.iter().enumerate() {
        let col = full.column(src);
        let scale = (rho / col.norm_squared()).sqrt();
        p.set_column(dst, &(col * C64::new(scale, 0.0)));
    }
    Ok(p)
}

/// `A = Pᵀ ⊗ I_{nrx}`, so that `A vec(H) = vec(H P)`.
pub fn build_observation_operator(p: &CMat, nrx: usize) -> CMat {
    kron(&p.transpose(), &identity(nrx))
}

#[derive(Clone, Debug)]
pub struct ObservationModel {
    pub pilots: CMat,
    pub operator: CMat,
    pub sigma2: f64,
    pub rho: f64,
    pub nrx: usize,
}

impl ObservationModel {
    pub fn new(ntx_h: usize, ntx_v: usize, nrx: usize, n_p: usize, rho: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) {
            return Err(Error::arg("noise variance must be non-negative"));
        }
        let pilots = build_pilot_matrix(ntx_h, ntx_v, n_p, rho)?;
        let operator = build_observation_operator(&pilots, nrx);
        Ok(ObservationModel {
            pilots,
            operator,
            sigma2,
            rho,
            nrx,
        })
    }

    pub fn n_pilots(&self) -> usize {
        self.pilots.ncols()
    }

    pub fn ntx(&self) -> usize {
        self.pilots.nrows()
    }

    /// Length of `y`, `N_rx · n_p`.
    pub fn obs_dim(&self) -> usize {
        self.operator.nrows()
    }

    /// Same pilots with a different noise level.
    pub fn with_sigma2(&self, sigma2: f64) -> Self {
        ObservationModel {
            sigma2,
            ..self.clone()
        }
    }

    /// `y = A vec(H) + n`, `n ~ CN(0, σ² I)`.
    pub fn observe<R: Rng + ?Sized>(&self, h: &CMat, rng: &mut R) -> Result<CVec> {
        if h.nrows() != self.nrx || h.ncols() != self.ntx() {
            return Err(Error::arg(format!(
                "channel is {}×{}, observation model expects {}×{}",
                h.nrows(),
                h.ncols(),
                self.nrx,
                self.ntx()
            )));
        }
        let clean = vec_of(&(h * &self.pilots));
        if self.sigma2 == 0.0 {
            return Ok(clean);
        }
        Ok(clean + complex_normal_vec(rng, self.obs_dim(), self.sigma2))
    }
}
