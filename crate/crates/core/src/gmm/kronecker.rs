//! Kronecker-structured GMMs assembled from separately fitted transmit-side
//! and receive-side mixtures.

use super::em::{fit_em_vectors, EmOptions};
use super::{log_sum_exp, GmmModel, Mixture};
use crate::channel::ChannelDataset;
use crate::error::{Error, Result};
use crate::linalg::{vec_of, CMat, CVec, C64};
use crate::par::map_slice;
use crate::rng::splitmix64;

#[derive(Clone, Debug)]
pub struct KroneckerOptions {
    pub em: EmOptions,
    /// Weight-only EM steps on the full channels after combining the factors.
    pub weight_iters: usize,
    /// Rescale every receive factor to trace `N_rx`, leaving the transmit
    /// factor to carry the power.
    pub normalize_rx_trace: bool,
}

impl Default for KroneckerOptions {
    fn default() -> Self {
        KroneckerOptions {
            em: EmOptions::default(),
            weight_iters: 10,
            normalize_rx_trace: false,
        }
    }
}

/// Fits `K = k_tx·k_rx` components with covariances `C_tx,a ⊗ C_rx,b`.
///
/// The transmit-side mixture is fitted to the rows of every `H`
/// (length `N_tx`), the receive-side mixture to the columns (length `N_rx`).
/// Component `a·k_rx + b` gets mean `vec(μ_rx,b μ_tx,aᵀ)` and initial weight
/// `p_tx,a p_rx,b`; the weights are then refined with the densities frozen.
pub fn fit_kronecker(ds: &ChannelDataset, k_tx: usize, k_rx: usize, opts: &KroneckerOptions) -> Result<GmmModel> {
    if k_tx == 0 || k_rx == 0 {
        return Err(Error::arg("k_tx and k_rx must be at least 1"));
    }
    if ds.len() < k_tx.max(k_rx) {
        return Err(Error::arg(format!(
            "{} samples cannot support k_tx = {k_tx}, k_rx = {k_rx}",
            ds.len()
        )));
    }
    let (nrx, ntx) = ds.dims();
    let rows: Vec<CVec> = ds
        .channels
        .iter()
        .flat_map(|h| (0..nrx).map(move |i| CVec::from_iterator(ntx, h.row(i).iter().copied())))
        .collect();
    let cols: Vec<CVec> = ds
        .channels
        .iter()
        .flat_map(|h| (0..ntx).map(move |j| h.column(j).into_owned()))
        .collect();

    let tx_opts = EmOptions {
        init_seed: splitmix64(opts.em.init_seed ^ 0x7478),
        ..opts.em.clone()
    };
    let rx_opts = EmOptions {
        init_seed: splitmix64(opts.em.init_seed ^ 0x7278),
        ..opts.em.clone()
    };
    let (tx_model, _) = fit_em_vectors(&rows, (ntx, 1), k_tx, &tx_opts)?;
    let (rx_model, _) = fit_em_vectors(&cols, (nrx, 1), k_rx, &rx_opts)?;

    let tx: Vec<CMat> = (0..k_tx).map(|a| tx_model.covariance(a)).collect();
    let mut rx: Vec<CMat> = (0..k_rx).map(|b| rx_model.covariance(b)).collect();
    if opts.normalize_rx_trace {
        for c in &mut rx {
            let tr: f64 = c.diagonal().iter().map(|z| z.re).sum();
            *c *= C64::new(nrx as f64 / tr, 0.0);
        }
    }
    let mut weights = Vec::with_capacity(k_tx * k_rx);
    let mut means = Vec::with_capacity(k_tx * k_rx);
    for a in 0..k_tx {
        for b in 0..k_rx {
            weights.push(tx_model.weights()[a] * rx_model.weights()[b]);
            let outer = &rx_model.means()[b] * tx_model.means()[a].transpose();
            means.push(vec_of(&outer));
        }
    }
    let model = GmmModel::kronecker(weights, means, tx, rx, (nrx, ntx))?;
    refine_weights(model, &ds.vectors(), opts)
}

/// Weight-only EM with the component densities held fixed.
fn refine_weights(model: GmmModel, data: &[CVec], opts: &KroneckerOptions) -> Result<GmmModel> {
    if opts.weight_iters == 0 || model.n_components() == 1 {
        return Ok(model);
    }
    let dens = model.component_densities()?;
    let log_pdf: Vec<Vec<f64>> = map_slice(opts.em.exec, data, |x| dens.iter().map(|d| d.log_pdf(x.as_slice())).collect());
    let k = model.n_components();
    let mut weights = model.weights().to_vec();
    for _ in 0..opts.weight_iters {
        let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        let mut acc = vec![0.0; k];
        for row in &log_pdf {
            let lj: Vec<f64> = row.iter().zip(&log_w).map(|(l, w)| l + w).collect();
            let lse = log_sum_exp(&lj);
            for (a, v) in acc.iter_mut().zip(&lj) {
                *a += (v - lse).exp();
            }
        }
        weights = acc.iter().map(|a| a / data.len() as f64).collect();
    }
    model.with_weights(weights)
}
