//! The GMM of the observation `y = A h + n` implied by a channel GMM.

use std::sync::{Arc, OnceLock};

use super::{GaussianDensity, GmmModel, Mixture};
use crate::error::{Error, Result};
use crate::linalg::{hermitize, identity, solve_hpd, CMat, CVec, C64};

/// Component `k` is `N(A μ_k, A C_k Aᴴ + σ² I)`.
#[derive(Clone, Debug)]
pub struct AdaptedGmm {
    base: Arc<GmmModel>,
    operator: CMat,
    sigma2: f64,
    means_y: Vec<CVec>,
    covs_y: Vec<CMat>,
    densities: Vec<GaussianDensity>,
    filters: OnceLock<std::result::Result<Vec<CMat>, String>>,
}

/// Adapts `model` to the observation operator `a` with noise variance
/// `sigma2`. The channel-domain model is shared, not refitted.
pub fn adapt_to_observation(model: Arc<GmmModel>, a: &CMat, sigma2: f64) -> Result<AdaptedGmm> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::arg("adaptation needs a positive noise variance"));
    }
    if a.ncols() != model.dim() {
        return Err(Error::arg(format!(
            "operator has {} columns, model dimension is {}",
            a.ncols(),
            model.dim()
        )));
    }
    let l = a.nrows();
    let noise = identity(l) * C64::new(sigma2, 0.0);
    let a_h = a.adjoint();
    let mut means_y = Vec::with_capacity(model.n_components());
    let mut covs_y = Vec::with_capacity(model.n_components());
    let mut densities = Vec::with_capacity(model.n_components());
    for k in 0..model.n_components() {
        let mean = a * &model.means()[k];
        let mut cov = a * model.covariance(k) * &a_h + &noise;
        hermitize(&mut cov);
        densities.push(GaussianDensity::new(mean.clone(), &cov)?);
        means_y.push(mean);
        covs_y.push(cov);
    }
    Ok(AdaptedGmm {
        base: model,
        operator: a.clone(),
        sigma2,
        means_y,
        covs_y,
        densities,
        filters: OnceLock::new(),
    })
}

impl AdaptedGmm {
    pub fn base(&self) -> &Arc<GmmModel> {
        &self.base
    }

    pub fn operator(&self) -> &CMat {
        &self.operator
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn means_y(&self) -> &[CVec] {
        &self.means_y
    }

    pub fn covs_y(&self) -> &[CMat] {
        &self.covs_y
    }

    /// Same channel model under a different operator or noise level.
    pub fn readapt(&self, a: &CMat, sigma2: f64) -> Result<AdaptedGmm> {
        adapt_to_observation(Arc::clone(&self.base), a, sigma2)
    }

    /// Per-component LMMSE filters `C_k Aᴴ (A C_k Aᴴ + σ² I)⁻¹`.
    pub fn filters(&self) -> Result<&[CMat]> {
        let cached = self.filters.get_or_init(|| {
            (0..self.covs_y.len())
                .map(|k| {
                    // G = C Aᴴ S⁻¹  ⇔  Gᴴ = S⁻¹ A C
                    let ac = &self.operator * self.base.covariance(k);
                    solve_hpd(&self.covs_y[k], &ac).map(|g_h| g_h.adjoint())
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.to_string())
        });
        cached.as_deref().map_err(|e| Error::Numerical(e.clone()))
    }
}

impl Mixture for AdaptedGmm {
    fn n_components(&self) -> usize {
        self.means_y.len()
    }
    fn input_dim(&self) -> usize {
        self.operator.nrows()
    }
    fn log_weights(&self) -> &[f64] {
        self.base.log_weights()
    }
    fn component_densities(&self) -> Result<&[GaussianDensity]> {
        Ok(&self.densities)
    }
}
