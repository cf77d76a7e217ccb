//! Complex Gaussian mixture models with full or Kronecker-structured
//! covariances: evaluation, sampling, fitting and observation-domain
//! adaptation.

mod adapted;
mod density;
mod em;
mod file;
mod kronecker;

use std::sync::OnceLock;

use rand::Rng;

pub use adapted::{adapt_to_observation, AdaptedGmm};
pub use density::GaussianDensity;
pub use em::{fit_em, fit_em_vectors, EmOptions, EmTrace};
pub use file::{read_model, write_model};
pub use kronecker::{fit_kronecker, KroneckerOptions};

use crate::channel::ChannelDataset;
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_lower, complex_normal_vec, exact_sum, is_hermitian, kron, lower_inverse, psd_factor, unvec, CMat, CVec,
    HermitianEig, C64,
};

#[derive(Clone, Debug, PartialEq)]
pub enum Covariances {
    Full(Vec<CMat>),
    /// Component `k = a·k_rx + b` has covariance `tx[a] ⊗ rx[b]`.
    Kronecker {
        k_tx: usize,
        k_rx: usize,
        tx: Vec<CMat>,
        rx: Vec<CMat>,
    },
}

/// Covariance layout without the fitted values, enough to count parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelShape {
    Full { k: usize, n: usize },
    Kronecker { k_tx: usize, ntx: usize, k_rx: usize, nrx: usize },
}

impl ModelShape {
    /// Complex covariance parameters, counting `n(n+1)/2` per Hermitian `n × n` matrix.
    pub fn parameter_count(&self) -> u64 {
        let tri = |n: usize| (n as u64) * (n as u64 + 1) / 2;
        match *self {
            ModelShape::Full { k, n } => k as u64 * tri(n),
            ModelShape::Kronecker { k_tx, ntx, k_rx, nrx } => k_tx as u64 * tri(ntx) + k_rx as u64 * tri(nrx),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GmmModel {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<CVec>,
    covariances: Covariances,
    /// `(rows, cols)` of the matrix whose vectorization is modeled.
    shape: (usize, usize),
    densities: OnceLock<std::result::Result<Vec<GaussianDensity>, String>>,
    factors: OnceLock<std::result::Result<Vec<CMat>, String>>,
}

fn normalized_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::arg("a mixture needs at least one component"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::arg("mixture weights must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::arg("mixture weights sum to zero"));
    }
    if (sum - 1.0).abs() <= 1e-12 {
        // already normalized: keep the values bit-for-bit
        return Ok(weights.to_vec());
    }
    Ok(weights.iter().map(|w| w / sum).collect())
}

impl GmmModel {
    /// Full-covariance model. Weights are rescaled to sum to one.
    pub fn full(weights: Vec<f64>, means: Vec<CVec>, covariances: Vec<CMat>, shape: (usize, usize)) -> Result<Self> {
        let n = shape.0 * shape.1;
        if covariances.len() != weights.len() {
            return Err(Error::arg("one covariance per component required"));
        }
        for c in &covariances {
            if c.shape() != (n, n) {
                return Err(Error::arg(format!("covariance is {:?}, expected {n}×{n}", c.shape())));
            }
        }
        Self::assemble(weights, means, Covariances::Full(covariances), shape)
    }

    /// Kronecker model over `rows × cols` matrices: transmit factors are
    /// `cols × cols`, receive factors `rows × rows`.
    pub fn kronecker(
        weights: Vec<f64>,
        means: Vec<CVec>,
        tx: Vec<CMat>,
        rx: Vec<CMat>,
        shape: (usize, usize),
    ) -> Result<Self> {
        let (nrx, ntx) = shape;
        if tx.is_empty() || rx.is_empty() || weights.len() != tx.len() * rx.len() {
            return Err(Error::arg("Kronecker model needs k_tx·k_rx weights"));
        }
        if tx.iter().any(|c| c.shape() != (ntx, ntx)) || rx.iter().any(|c| c.shape() != (nrx, nrx)) {
            return Err(Error::arg("Kronecker factor dimensions do not match the model shape"));
        }
        let cov = Covariances::Kronecker {
            k_tx: tx.len(),
            k_rx: rx.len(),
            tx,
            rx,
        };
        Self::assemble(weights, means, cov, shape)
    }

    fn assemble(weights: Vec<f64>, means: Vec<CVec>, covariances: Covariances, shape: (usize, usize)) -> Result<Self> {
        let weights = normalized_weights(&weights)?;
        let n = shape.0 * shape.1;
        if means.len() != weights.len() || means.iter().any(|m| m.len() != n) {
            return Err(Error::arg(format!("expected {} means of length {n}", weights.len())));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(GmmModel {
            weights,
            log_weights,
            means,
            covariances,
            shape,
            densities: OnceLock::new(),
            factors: OnceLock::new(),
        })
    }

    /// Same components with new (unnormalized) weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_components() {
            return Err(Error::arg("weight count does not match component count"));
        }
        Self::assemble(weights, self.means.clone(), self.covariances.clone(), self.shape)
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[CVec] {
        &self.means
    }

    pub fn covariances(&self) -> &Covariances {
        &self.covariances
    }

    pub fn is_kronecker(&self) -> bool {
        matches!(self.covariances, Covariances::Kronecker { .. })
    }

    pub fn model_shape(&self) -> ModelShape {
        match &self.covariances {
            Covariances::Full(_) => ModelShape::Full {
                k: self.n_components(),
                n: self.dim(),
            },
            Covariances::Kronecker { k_tx, k_rx, .. } => ModelShape::Kronecker {
                k_tx: *k_tx,
                ntx: self.shape.1,
                k_rx: *k_rx,
                nrx: self.shape.0,
            },
        }
    }

    pub fn parameter_count(&self) -> u64 {
        self.model_shape().parameter_count()
    }

    /// `(a, b)` factor indices of component `k` for Kronecker models.
    pub fn factor_indices(&self, k: usize) -> Option<(usize, usize)> {
        match &self.covariances {
            Covariances::Kronecker { k_rx, .. } => Some((k / k_rx, k % k_rx)),
            Covariances::Full(_) => None,
        }
    }

    /// Covariance of component `k` (0-based); Kronecker products are formed on demand.
    pub fn covariance(&self, k: usize) -> CMat {
        match &self.covariances {
            Covariances::Full(c) => c[k].clone(),
            Covariances::Kronecker { k_rx, tx, rx, .. } => kron(&tx[k / k_rx], &rx[k % k_rx]),
        }
    }

    /// Checks the stored invariants: normalized weights, Hermitian PSD covariances.
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::ModelIntegrity(format!("weights sum to {sum}")));
        }
        let check = |c: &CMat, what: &str| -> Result<()> {
            let scale = c.norm().max(1.0);
            if !is_hermitian(c, 1e-10 * scale) {
                return Err(Error::ModelIntegrity(format!("{what} is not Hermitian")));
            }
            let min = HermitianEig::new(c).min();
            if min < -1e-10 * scale {
                return Err(Error::ModelIntegrity(format!("{what} has eigenvalue {min:.3e}")));
            }
            Ok(())
        };
        match &self.covariances {
            Covariances::Full(cs) => {
                for (k, c) in cs.iter().enumerate() {
                    check(c, &format!("covariance {k}"))?;
                }
            }
            Covariances::Kronecker { tx, rx, .. } => {
                for (a, c) in tx.iter().enumerate() {
                    check(c, &format!("transmit factor {a}"))?;
                }
                for (b, c) in rx.iter().enumerate() {
                    check(c, &format!("receive factor {b}"))?;
                }
            }
        }
        Ok(())
    }

    /// Per-component densities, built on first use.
    pub fn densities(&self) -> Result<&[GaussianDensity]> {
        let cached = self.densities.get_or_init(|| self.build_densities().map_err(|e| e.to_string()));
        cached.as_deref().map_err(|e| Error::Numerical(e.clone()))
    }

    fn build_densities(&self) -> Result<Vec<GaussianDensity>> {
        match &self.covariances {
            Covariances::Full(cs) => cs
                .iter()
                .zip(&self.means)
                .map(|(c, m)| GaussianDensity::new(m.clone(), c))
                .collect(),
            Covariances::Kronecker { k_rx, tx, rx, .. } => {
                let side = |c: &CMat| -> Result<(CMat, f64)> {
                    let l = cholesky_lower(c)
                        .ok_or_else(|| Error::Numerical("Kronecker factor is not positive definite".into()))?;
                    let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>();
                    Ok((lower_inverse(&l), log_det))
                };
                let tx_side: Vec<_> = tx.iter().map(side).collect::<Result<_>>()?;
                let rx_side: Vec<_> = rx.iter().map(side).collect::<Result<_>>()?;
                let (nrx, ntx) = self.shape;
                Ok(self
                    .means
                    .iter()
                    .enumerate()
                    .map(|(k, m)| {
                        let (wt, dt) = &tx_side[k / k_rx];
                        let (wr, dr) = &rx_side[k % k_rx];
                        let log_det = nrx as f64 * dt + ntx as f64 * dr;
                        GaussianDensity::from_whitener(m.clone(), &kron(wt, wr), log_det)
                    })
                    .collect())
            }
        }
    }

    fn factors(&self) -> Result<&[CMat]> {
        let cached = self.factors.get_or_init(|| {
            (0..self.n_components())
                .map(|k| psd_factor(&self.covariance(k), 1e-10))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.to_string())
        });
        cached.as_deref().map_err(|e| Error::ModelIntegrity(e.clone()))
    }

    /// Draws `μ_k + F z` with `F Fᴴ = C_k` and `z` standard complex normal.
    pub fn sample_component<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<CVec> {
        if k >= self.n_components() {
            return Err(Error::arg(format!("component {k} out of range 0..{}", self.n_components())));
        }
        let f = &self.factors()?[k];
        let z = complex_normal_vec(rng, self.dim(), 1.0);
        Ok(&self.means[k] + f * z)
    }

    /// `sample_component` reshaped to the modeled matrix.
    pub fn sample_channel<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<CMat> {
        let v = self.sample_component(k, rng)?;
        Ok(unvec(&v, self.shape.0, self.shape.1))
    }

    /// `Σ_i ln Σ_k p(k) N(x_i; μ_k, C_k)`.
    pub fn log_likelihood(&self, data: &[CVec]) -> Result<f64> {
        let per_sample = data
            .iter()
            .map(|x| log_joint(self, x.as_slice()).map(|lj| log_sum_exp(&lj)))
            .collect::<Result<Vec<_>>>()?;
        Ok(exact_sum(per_sample))
    }

    pub fn log_likelihood_dataset(&self, ds: &ChannelDataset) -> Result<f64> {
        self.log_likelihood(&ds.vectors())
    }
}

/// A mixture of complex Gaussians whose responsibilities can be evaluated.
pub trait Mixture: Sync {
    fn n_components(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn log_weights(&self) -> &[f64];
    fn component_densities(&self) -> Result<&[GaussianDensity]>;
}

impl Mixture for GmmModel {
    fn n_components(&self) -> usize {
        self.weights.len()
    }
    fn input_dim(&self) -> usize {
        self.dim()
    }
    fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }
    fn component_densities(&self) -> Result<&[GaussianDensity]> {
        self.densities()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln p(k) + ln N(x; μ_k, C_k)` for every component.
pub fn log_joint<M: Mixture + ?Sized>(m: &M, x: &[C64]) -> Result<Vec<f64>> {
    if x.len() != m.input_dim() {
        return Err(Error::arg(format!(
            "input has length {}, mixture expects {}",
            x.len(),
            m.input_dim()
        )));
    }
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::arg("input contains non-finite entries"));
    }
    let dens = m.component_densities()?;
    Ok(dens
        .iter()
        .zip(m.log_weights())
        .map(|(d, lw)| lw + d.log_pdf(x))
        .collect())
}

/// Posterior component probabilities `p(k | x)`.
pub fn responsibilities<M: Mixture + ?Sized>(m: &M, x: &CVec) -> Result<Vec<f64>> {
    Ok(normalize_log(&log_joint(m, x.as_slice())?))
}

pub(crate) fn normalize_log(log_joint: &[f64]) -> Vec<f64> {
    let max = log_joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut r: Vec<f64> = log_joint.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = r.iter().sum();
    for v in &mut r {
        *v /= sum;
    }
    r
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Most responsible component (0-based), lowest index on ties.
pub fn most_responsible<M: Mixture + ?Sized>(m: &M, x: &CVec) -> Result<usize> {
    Ok(argmax(&log_joint(m, x.as_slice())?))
}
