//! Single-user transmit strategies, multi-user precoders (RBD, RCI, WMMSE,
//! stochastic WMMSE on GMM components) and sum-rate evaluation.

use rand::Rng;

use crate::codebooks::component_gram;
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::linalg::{
    cholesky_lower, dominant_right_subspace, hermitize, identity, inverse_hpd, svd,
    water_fill, CMat, HermitianEig, C64,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PrecoderSet {
    /// `M_j`, `N_tx × d_j` per user.
    pub m: Vec<CMat>,
    pub rho: f64,
}

impl PrecoderSet {
    pub fn total_power(&self) -> f64 {
        self.m.iter().map(|m| m.norm_squared()).sum()
    }
}

/// Scales every precoder by the same factor so that `tr(Σ M_j M_jᴴ) = ρ`.
pub fn normalize_power(ps: &PrecoderSet, rho: f64) -> Result<PrecoderSet> {
    let p = ps.total_power();
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::Degenerate("precoders carry no power".into()));
    }
    let s = C64::new((rho / p).sqrt(), 0.0);
    Ok(PrecoderSet {
        m: ps.m.iter().map(|m| m * s).collect(),
        rho,
    })
}

fn ln_det_hpd_or_eig(m: &CMat) -> f64 {
    match cholesky_lower(m) {
        Some(l) => 2.0 * (0..m.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>(),
        None => HermitianEig::new(m).values.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).sum(),
    }
}

/// `Σ_j log₂ det(I + H_j M_j M_jᴴ H_jᴴ (Σ_{m≠j} H_j M_m M_mᴴ H_jᴴ + σ² I)⁻¹)`.
pub fn sum_rate(h_true: &[CMat], ps: &PrecoderSet, sigma2: f64) -> Result<f64> {
    if h_true.len() != ps.m.len() {
        return Err(Error::arg("one precoder per user required"));
    }
    let mut total = 0.0;
    for (j, h) in h_true.iter().enumerate() {
        if ps.m.iter().any(|m| m.nrows() != h.ncols()) {
            return Err(Error::arg("precoder rows must equal N_tx"));
        }
        let nrx = h.nrows();
        let mut interference = identity(nrx) * C64::new(sigma2, 0.0);
        for (m_idx, m) in ps.m.iter().enumerate() {
            if m_idx != j {
                let g = h * m;
                interference += &g * g.adjoint();
            }
        }
        let g = h * &ps.m[j];
        let mut with_signal = &interference + &g * g.adjoint();
        hermitize(&mut interference);
        hermitize(&mut with_signal);
        total += (ln_det_hpd_or_eig(&with_signal) - ln_det_hpd_or_eig(&interference)).max(0.0);
    }
    Ok(total / std::f64::consts::LN_2)
}

/// Capacity-achieving covariance and the capacity of `h`.
pub fn waterfilling_capacity(h: &CMat, rho: f64, sigma2: f64) -> Result<(CMat, f64)> {
    if h.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return Err(Error::Degenerate("zero channel has no capacity-achieving direction".into()));
    }
    if !(rho > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::arg("rho and sigma2 must be positive"));
    }
    let dec = svd(h);
    let gains: Vec<f64> = dec.singular_values.iter().map(|s| s * s / sigma2).collect();
    let p = water_fill(&gains, rho);
    let v = dec.v_t.adjoint();
    let mut q = CMat::zeros(h.ncols(), h.ncols());
    for (i, pi) in p.iter().enumerate() {
        if *pi > 0.0 {
            q += v.column(i) * v.column(i).adjoint() * C64::new(*pi, 0.0);
        }
    }
    hermitize(&mut q);
    let cap = p.iter().zip(&gains).map(|(pi, g)| (1.0 + g * pi).log2()).sum();
    Ok((q, cap))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    /// `(ρ/N_tx) I`.
    UniformCov,
    /// `(ρ/N_rx) V̄ V̄ᴴ` on the dominant right singular vectors.
    UniformEigsp,
}

pub fn baseline_tx_strategy(kind: BaselineKind, h: Option<&CMat>, ntx: usize, nrx: usize, rho: f64) -> Result<CMat> {
    match kind {
        BaselineKind::UniformCov => Ok(identity(ntx) * C64::new(rho / ntx as f64, 0.0)),
        BaselineKind::UniformEigsp => {
            let h = h.ok_or_else(|| Error::arg("uniform eigenspace allocation needs the channel"))?;
            if h.ncols() != ntx || nrx == 0 || nrx > ntx {
                return Err(Error::arg("channel dimensions do not match the strategy"));
            }
            let v = dominant_right_subspace(h, nrx);
            let mut q = &v * v.adjoint() * C64::new(rho / nrx as f64, 0.0);
            hermitize(&mut q);
            Ok(q)
        }
    }
}

fn check_users(h: &[CMat], min_users: usize) -> Result<(usize, usize)> {
    if h.len() < min_users {
        return Err(Error::arg(format!("need at least {min_users} users")));
    }
    let ntx = h[0].ncols();
    if h.iter().any(|x| x.ncols() != ntx || x.nrows() == 0) {
        return Err(Error::arg("all user channels must share N_tx"));
    }
    Ok((ntx, h[0].nrows()))
}

/// `α = J N_rx σ² / ρ`.
pub fn regularization(j: usize, nrx: usize, rho: f64, sigma2: f64) -> f64 {
    j as f64 * nrx as f64 * sigma2 / rho
}

/// Regularized block diagonalization with uniform power per stream.
pub fn rbd(h_tilde: &[CMat], rho: f64, sigma2: f64) -> Result<PrecoderSet> {
    let (ntx, nrx) = check_users(h_tilde, 2)?;
    let alpha = regularization(h_tilde.len(), nrx, rho, sigma2);
    let mut m = Vec::with_capacity(h_tilde.len());
    for j in 0..h_tilde.len() {
        let mut gram = identity(ntx) * C64::new(alpha, 0.0);
        for (i, h) in h_tilde.iter().enumerate() {
            if i != j {
                gram += h.ad_mul(h);
            }
        }
        let eig = HermitianEig::new(&gram);
        let whitening = eig.reassemble(|l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt());
        let eff = &h_tilde[j] * &whitening;
        let d = h_tilde[j].nrows().min(ntx);
        let v = dominant_right_subspace(&eff, d);
        m.push(&whitening * v);
    }
    normalize_power(&PrecoderSet { m, rho }, rho)
}

/// Regularized channel inversion `Hᴴ (H Hᴴ + α I)⁻¹` on the stacked channels.
pub fn rci(h_tilde: &[CMat], rho: f64, sigma2: f64) -> Result<PrecoderSet> {
    let (ntx, nrx) = check_users(h_tilde, 2)?;
    let rows: usize = h_tilde.iter().map(|h| h.nrows()).sum();
    let mut stacked = CMat::zeros(rows, ntx);
    let mut r = 0;
    for h in h_tilde {
        stacked.rows_mut(r, h.nrows()).copy_from(h);
        r += h.nrows();
    }
    let alpha = regularization(h_tilde.len(), nrx, rho, sigma2);
    let mut gram = &stacked * stacked.adjoint() + identity(rows) * C64::new(alpha, 0.0);
    hermitize(&mut gram);
    let full = stacked.adjoint() * inverse_hpd(&gram)?;
    let mut m = Vec::with_capacity(h_tilde.len());
    let mut c = 0;
    for h in h_tilde {
        m.push(full.columns(c, h.nrows()).into_owned());
        c += h.nrows();
    }
    normalize_power(&PrecoderSet { m, rho }, rho)
}

/// MMSE receive filters `U_j` and weights `W_j = (I − U_jᴴ H_j M_j)⁻¹`.
fn receivers(h: &[CMat], m: &[CMat], sigma2: f64) -> Result<(Vec<CMat>, Vec<CMat>)> {
    let mut us = Vec::with_capacity(h.len());
    let mut ws = Vec::with_capacity(h.len());
    for (j, hj) in h.iter().enumerate() {
        let nrx = hj.nrows();
        let mut cov = identity(nrx) * C64::new(sigma2, 0.0);
        for mm in m {
            let g = hj * mm;
            cov += &g * g.adjoint();
        }
        hermitize(&mut cov);
        let l = cholesky_lower(&cov).ok_or_else(|| Error::Numerical("receive covariance not positive definite".into()))?;
        let hm = hj * &m[j];
        let mut u = hm.clone();
        l.solve_lower_triangular_mut(&mut u);
        l.ad_solve_lower_triangular_mut(&mut u);
        let d = m[j].ncols();
        let mut e = identity(d) - u.ad_mul(&hm);
        hermitize(&mut e);
        let w = inverse_hpd(&e)?;
        us.push(u);
        ws.push(w);
    }
    Ok((us, ws))
}

/// `M_j = (A + μI)⁻¹ B_j` with the smallest `μ ≥ 0` keeping the total
/// power within `ρ`, then scaled to exactly `ρ`.
fn power_constrained_solve(a: &CMat, b: &[CMat], rho: f64) -> Result<PrecoderSet> {
    let eig = HermitianEig::new(a);
    let floor = 1e-12 * eig.max().abs().max(f64::MIN_POSITIVE);
    let projected: Vec<CMat> = b.iter().map(|bj| eig.vectors.ad_mul(bj)).collect();
    let weights: Vec<f64> = (0..eig.values.len())
        .map(|i| projected.iter().map(|p| p.row(i).norm_squared()).sum())
        .collect();
    let power = |mu: f64| -> f64 {
        eig.values
            .iter()
            .zip(&weights)
            .map(|(&l, &g)| {
                let denom = l.max(0.0) + mu;
                if denom <= floor {
                    0.0
                } else {
                    g / (denom * denom)
                }
            })
            .sum()
    };
    let mut mu = 0.0;
    if power(0.0) > rho {
        let mut hi = eig.max().abs().max(1e-12);
        while power(hi) > rho {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if power(mid) > rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        mu = hi;
    }
    let inv: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| {
            let denom = l.max(0.0) + mu;
            if denom <= floor {
                0.0
            } else {
                1.0 / denom
            }
        })
        .collect();
    let m = projected
        .iter()
        .map(|p| {
            let mut scaled = p.clone();
            for (i, s) in inv.iter().enumerate() {
                scaled.row_mut(i).scale_mut(*s);
            }
            &eig.vectors * scaled
        })
        .collect();
    normalize_power(&PrecoderSet { m, rho }, rho)
}

#[derive(Clone, Debug)]
pub struct WmmseResult {
    pub precoders: PrecoderSet,
    /// Sum-rate on the input channels, initial point first.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

pub const DEFAULT_I_MAX: usize = 300;

/// Iterative WMMSE with `d` streams per user under the sum-power constraint.
pub fn wmmse(h_tilde: &[CMat], rho: f64, sigma2: f64, d: usize, i_max: usize) -> Result<WmmseResult> {
    wmmse_with_tol(h_tilde, rho, sigma2, d, i_max, 1e-6)
}

pub fn wmmse_with_tol(h_tilde: &[CMat], rho: f64, sigma2: f64, d: usize, i_max: usize, tol: f64) -> Result<WmmseResult> {
    wmmse_monitored(h_tilde, rho, sigma2, d, i_max, tol, |_, _| Ok(()))
}

/// As [`wmmse_with_tol`], calling `monitor(i, precoders)` after every iteration.
pub fn wmmse_monitored<F>(h_tilde: &[CMat], rho: f64, sigma2: f64, d: usize, i_max: usize, tol: f64, mut monitor: F) -> Result<WmmseResult>
where
    F: FnMut(usize, &PrecoderSet) -> Result<()>,
{
    check_users(h_tilde, 1)?;
    if d == 0 || h_tilde.iter().any(|h| d > h.nrows()) {
        return Err(Error::arg(format!("stream count d = {d} must lie in 1..=N_rx")));
    }
    if !(rho > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::arg("rho and sigma2 must be positive"));
    }
    let init = h_tilde.iter().map(|h| dominant_right_subspace(h, d)).collect();
    let mut ps = normalize_power(&PrecoderSet { m: init, rho }, rho)?;
    let mut trace = vec![sum_rate(h_tilde, &ps, sigma2)?];
    let mut iterations = 0;
    while iterations < i_max {
        iterations += 1;
        let (us, ws) = receivers(h_tilde, &ps.m, sigma2)?;
        let ntx = h_tilde[0].ncols();
        let mut a = CMat::zeros(ntx, ntx);
        let mut b = Vec::with_capacity(h_tilde.len());
        for ((h, u), w) in h_tilde.iter().zip(&us).zip(&ws) {
            let hu = h.ad_mul(u);
            a += &hu * w * hu.adjoint();
            b.push(hu * w);
        }
        hermitize(&mut a);
        ps = power_constrained_solve(&a, &b, rho)?;
        monitor(iterations - 1, &ps)?;
        let r = sum_rate(h_tilde, &ps, sigma2)?;
        let prev = *trace.last().expect("initial rate recorded");
        trace.push(r);
        if (r - prev).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(WmmseResult {
        precoders: ps,
        trace,
        iterations,
    })
}

#[derive(Clone, Debug)]
pub struct SwmmseOptions {
    pub i_max: usize,
    /// Diagonal regularizer `β`; `None` means `1e-4 ρ`.
    pub beta: Option<f64>,
    /// Streams per user; `None` means `N_rx`.
    pub d: Option<usize>,
    /// Averaging weight `γ_i = (i + 1)^(−step_decay)`; `1.0` is the plain
    /// running mean.
    pub step_decay: f64,
}

impl Default for SwmmseOptions {
    fn default() -> Self {
        SwmmseOptions {
            i_max: DEFAULT_I_MAX,
            beta: None,
            d: None,
            step_decay: 0.6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SwmmseResult {
    pub precoders: PrecoderSet,
    /// Sum-rate of the updated precoders on each iteration's samples.
    pub sample_rates: Vec<f64>,
}

/// Stochastic WMMSE over channels drawn from the fed-back GMM components.
pub fn swmmse<R: Rng + ?Sized>(
    model: &GmmModel,
    k_stars: &[usize],
    rho: f64,
    sigma2: f64,
    opts: &SwmmseOptions,
    rng: &mut R,
) -> Result<SwmmseResult> {
    swmmse_monitored(model, k_stars, rho, sigma2, opts, rng, |_, _| Ok(()))
}

/// As [`swmmse`], calling `monitor(i, precoders)` after every iteration.
pub fn swmmse_monitored<R, F>(
    model: &GmmModel,
    k_stars: &[usize],
    rho: f64,
    sigma2: f64,
    opts: &SwmmseOptions,
    rng: &mut R,
    mut monitor: F,
) -> Result<SwmmseResult>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &PrecoderSet) -> Result<()>,
{
    if k_stars.is_empty() {
        return Err(Error::arg("no users"));
    }
    if let Some(&bad) = k_stars.iter().find(|&&k| k >= model.n_components()) {
        return Err(Error::arg(format!("component {bad} out of range")));
    }
    if !(0.0..=1.0).contains(&opts.step_decay) {
        return Err(Error::arg("step_decay must lie in [0, 1]"));
    }
    if !(rho > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::arg("rho and sigma2 must be positive"));
    }
    let (nrx, ntx) = model.shape();
    let d = opts.d.unwrap_or(nrx);
    if d == 0 || d > nrx {
        return Err(Error::arg(format!("stream count d = {d} must lie in 1..={nrx}")));
    }
    let beta = opts.beta.unwrap_or(1e-4 * rho);
    let init = k_stars
        .iter()
        .map(|&k| HermitianEig::new(&component_gram(model, k)).vectors.columns(0, d).into_owned())
        .collect();
    let mut ps = normalize_power(&PrecoderSet { m: init, rho }, rho)?;
    let mut a = CMat::zeros(ntx, ntx);
    let mut b: Vec<CMat> = vec![CMat::zeros(ntx, d); k_stars.len()];
    let mut sample_rates = Vec::with_capacity(opts.i_max);
    for i in 0..opts.i_max {
        let gamma = (i as f64 + 1.0).powf(-opts.step_decay);
        let samples = k_stars
            .iter()
            .map(|&k| model.sample_channel(k, rng))
            .collect::<Result<Vec<_>>>()?;
        let (us, ws) = receivers(&samples, &ps.m, sigma2)?;
        let mut a_new = identity(ntx) * C64::new(beta, 0.0);
        for ((h, u), w) in samples.iter().zip(&us).zip(&ws) {
            let hu = h.ad_mul(u);
            a_new += &hu * w * hu.adjoint();
        }
        a = &a * C64::new(1.0 - gamma, 0.0) + a_new * C64::new(gamma, 0.0);
        hermitize(&mut a);
        for j in 0..k_stars.len() {
            let fresh = &ps.m[j] * C64::new(beta, 0.0) + samples[j].ad_mul(&us[j]) * &ws[j];
            b[j] = &b[j] * C64::new(1.0 - gamma, 0.0) + fresh * C64::new(gamma, 0.0);
        }
        ps = power_constrained_solve(&a, &b, rho)?;
        sample_rates.push(sum_rate(&samples, &ps, sigma2)?);
        monitor(i, &ps)?;
    }
    Ok(SwmmseResult {
        precoders: ps,
        sample_rates,
    })
}

#[cfg(test)]
mod tests;
