//! Selection of the fed-back codebook index.

use crate::codebooks::{CovCodebook, DirCodebook, RateEvaluator};
use crate::error::{Error, Result};
use crate::gmm::{argmax, most_responsible, AdaptedGmm, GmmModel};
use crate::linalg::{dominant_right_subspace, hermitize, log2_det_identity_plus, vec_of, CMat, CVec, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMethod {
    RateCov,
    RateSubspace,
    Responsibility,
    ResponsibilityPerfect,
    Chordal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedbackIndex {
    /// 0-based position in the codebook.
    pub index: usize,
    pub method: SelectionMethod,
}

impl FeedbackIndex {
    /// 1-based index as transmitted, in `1..=K`.
    pub fn k_star(&self) -> usize {
        self.index + 1
    }
}

fn check_codebook<T>(entries: &[T]) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::arg("empty codebook"));
    }
    Ok(())
}

/// `argmax_k log₂ det(I + Ĥ Q_k Ĥᴴ / σ²)`.
pub fn select_by_rate_cov(h_hat: &CMat, cb: &CovCodebook, sigma2: f64) -> Result<FeedbackIndex> {
    check_codebook(&cb.entries)?;
    if cb.entries[0].nrows() != h_hat.ncols() {
        return Err(Error::arg("channel and codebook disagree on N_tx"));
    }
    select_by_rate_eval(h_hat, &cb.rate_evaluator(), sigma2)
}

/// As [`select_by_rate_cov`] with the codebook factors prepared once.
pub fn select_by_rate_eval(h_hat: &CMat, eval: &RateEvaluator, sigma2: f64) -> Result<FeedbackIndex> {
    if !(sigma2 > 0.0) {
        return Err(Error::arg("noise variance must be positive"));
    }
    Ok(FeedbackIndex {
        index: eval.best(h_hat, sigma2).0,
        method: SelectionMethod::RateCov,
    })
}

/// Rate metric with `Q = (ρ/N_rx) W Wᴴ`.
pub fn subspace_metric(h_hat: &CMat, w: &CMat, rho: f64, sigma2: f64) -> f64 {
    let g = h_hat * w;
    let mut m = &g * g.adjoint() * C64::new(rho / (sigma2 * h_hat.nrows() as f64), 0.0);
    hermitize(&mut m);
    log2_det_identity_plus(&m)
}

pub fn select_by_rate_subspace(h_hat: &CMat, cb: &DirCodebook, rho: f64, sigma2: f64) -> Result<FeedbackIndex> {
    check_codebook(&cb.entries)?;
    if cb.entries[0].nrows() != h_hat.ncols() {
        return Err(Error::arg("channel and codebook disagree on N_tx"));
    }
    let metrics: Vec<f64> = cb.entries.iter().map(|w| subspace_metric(h_hat, w, rho, sigma2)).collect();
    Ok(FeedbackIndex {
        index: argmax(&metrics),
        method: SelectionMethod::RateSubspace,
    })
}

/// Most responsible component of the adapted model for the observation `y`.
pub fn select_by_responsibility(adapted: &AdaptedGmm, y: &CVec) -> Result<FeedbackIndex> {
    Ok(FeedbackIndex {
        index: most_responsible(adapted, y)?,
        method: SelectionMethod::Responsibility,
    })
}

/// Most responsible component for a perfectly known channel.
pub fn select_by_responsibility_perfect(model: &GmmModel, h: &CMat) -> Result<FeedbackIndex> {
    if h.shape() != model.shape() {
        return Err(Error::arg("channel shape does not match the model"));
    }
    Ok(FeedbackIndex {
        index: most_responsible(model, &vec_of(h))?,
        method: SelectionMethod::ResponsibilityPerfect,
    })
}

/// `argmin_k N_rx − ‖V̄ᴴ W_k‖²_F`.
pub fn select_by_chordal(v_bar: &CMat, cb: &DirCodebook) -> Result<FeedbackIndex> {
    check_codebook(&cb.entries)?;
    if cb.entries[0].shape() != v_bar.shape() {
        return Err(Error::arg("subspace and codebook shapes differ"));
    }
    let neg: Vec<f64> = cb
        .entries
        .iter()
        .map(|w| -(v_bar.ncols() as f64 - v_bar.ad_mul(w).norm_squared()))
        .collect();
    Ok(FeedbackIndex {
        index: argmax(&neg),
        method: SelectionMethod::Chordal,
    })
}

/// First `N_rx` right singular vectors of the (estimated) channel.
pub fn dominant_subspace(h: &CMat) -> CMat {
    dominant_right_subspace(h, h.nrows().min(h.ncols()))
}
