//! Expectation-maximization for complex GMMs with k-means++ initialization.

use rand::Rng;

use super::{log_sum_exp, normalize_log, GaussianDensity, GmmModel};
use crate::channel::ChannelDataset;
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64, ZERO};
use crate::par::{map_range, map_slice, Execution};
use crate::rng::{seeded, derive_seed, purpose};

/// Responsibilities below this are left out of the sufficient statistics.
const RESP_FLOOR: f64 = 1e-12;
/// Relative weight under which a component counts as collapsed.
const COLLAPSE: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Relative log-likelihood change that ends the iteration. `f64::INFINITY`
    /// performs exactly one EM step.
    pub tol: f64,
    /// Diagonal loading added to every covariance. `None` uses `1e-6` times
    /// the average per-entry variance of the data.
    pub reg_eps: Option<f64>,
    pub init_seed: u64,
    /// Pin all means to zero.
    pub zero_mean: bool,
    pub kmeans_iters: usize,
    pub exec: Execution,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 100,
            tol: 1e-5,
            reg_eps: None,
            init_seed: 0,
            zero_mean: false,
            kmeans_iters: 10,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EmTrace {
    /// Log-likelihood of the parameters at the start of each iteration and
    /// of the returned parameters as the last entry.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reg_eps: f64,
    /// Components re-seeded after collapsing.
    pub reseeded: Vec<usize>,
}

/// Fits a full-covariance GMM to the vectorized channels of `ds`.
pub fn fit_em(ds: &ChannelDataset, k: usize, opts: &EmOptions) -> Result<GmmModel> {
    Ok(fit_em_vectors(&ds.vectors(), ds.dims(), k, opts)?.0)
}

/// Fits a full-covariance GMM to `data`, each vector the column-major
/// vectorization of a `shape` matrix.
pub fn fit_em_vectors(data: &[CVec], shape: (usize, usize), k: usize, opts: &EmOptions) -> Result<(GmmModel, EmTrace)> {
    let n = shape.0 * shape.1;
    if k == 0 {
        return Err(Error::arg("K must be at least 1"));
    }
    if data.len() < k {
        return Err(Error::arg(format!("{} samples cannot support K = {k}", data.len())));
    }
    if data.iter().any(|x| x.len() != n) {
        return Err(Error::arg(format!("all samples must have length {n}")));
    }
    if data.iter().flat_map(|x| x.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::arg("training data contains non-finite entries"));
    }
    if !(opts.tol >= 0.0) {
        return Err(Error::arg("tol must be non-negative"));
    }
    let m = data.len();
    let global_mean = if opts.zero_mean { CVec::zeros(n) } else { mean_of(data) };
    let global_cov = {
        let all = vec![1.0; m];
        scatter(data, &all, &global_mean) / C64::new(m as f64, 0.0)
    };
    let avg_var = (0..n).map(|i| global_cov[(i, i)].re).sum::<f64>() / n as f64;
    let eps = match opts.reg_eps {
        Some(e) if e >= 0.0 => e,
        Some(_) => return Err(Error::arg("reg_eps must be non-negative")),
        None => 1e-6 * avg_var.max(f64::MIN_POSITIVE),
    };
    let loaded = |mut c: CMat| {
        for i in 0..n {
            c[(i, i)] += C64::new(eps, 0.0);
        }
        c
    };

    let mut rng = seeded(derive_seed(opts.init_seed, purpose::EM_INIT));
    let labels = kmeans_pp(data, k, opts.kmeans_iters, &mut rng);
    let mut weights = vec![0.0; k];
    let mut means = vec![CVec::zeros(n); k];
    let mut covs = Vec::with_capacity(k);
    for j in 0..k {
        let mask: Vec<f64> = labels.iter().map(|&l| if l == j { 1.0 } else { 0.0 }).collect();
        let count: f64 = mask.iter().sum();
        weights[j] = count.max(1.0) / m as f64;
        if count >= 1.0 && !opts.zero_mean {
            means[j] = weighted_mean(data, &mask, count);
        }
        covs.push(if count >= 2.0 {
            loaded(scatter(data, &mask, &means[j]) / C64::new(count, 0.0))
        } else {
            loaded(global_cov.clone())
        });
    }

    let mut trace = EmTrace {
        reg_eps: eps,
        ..EmTrace::default()
    };
    let mut reseeded = vec![false; k];
    loop {
        let dens = build_densities(&means, &covs)?;
        let log_w: Vec<f64> = {
            let s: f64 = weights.iter().sum();
            weights.iter().map(|w| (w / s).ln()).collect()
        };
        let stats = map_slice(opts.exec, data, |x| {
            let lj: Vec<f64> = dens.iter().zip(&log_w).map(|(d, lw)| lw + d.log_pdf(x.as_slice())).collect();
            (log_sum_exp(&lj), normalize_log(&lj))
        });
        let ll: f64 = stats.iter().map(|s| s.0).sum();
        if !ll.is_finite() {
            return Err(Error::Numerical("EM log-likelihood is not finite".into()));
        }
        trace.log_likelihoods.push(ll);
        let len = trace.log_likelihoods.len();
        if len >= 2 {
            let prev = trace.log_likelihoods[len - 2];
            let rel = (ll - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            if rel < opts.tol {
                trace.converged = true;
                break;
            }
        }
        if trace.iterations >= opts.max_iter {
            break;
        }

        // M-step, one task per component
        let updated = map_range(opts.exec, k, |j| {
            let r: Vec<f64> = stats.iter().map(|s| s.1[j]).collect();
            let nk: f64 = r.iter().sum();
            if nk / (m as f64) < COLLAPSE {
                return None;
            }
            let mean = if opts.zero_mean { CVec::zeros(n) } else { weighted_mean(data, &r, nk) };
            let cov = loaded(scatter(data, &r, &mean) / C64::new(nk, 0.0));
            Some((nk / m as f64, mean, cov))
        });
        for (j, upd) in updated.into_iter().enumerate() {
            match upd {
                Some((w, mean, cov)) => {
                    weights[j] = w;
                    means[j] = mean;
                    covs[j] = cov;
                }
                None => {
                    if reseeded[j] {
                        return Err(Error::ComponentCollapse(j));
                    }
                    reseeded[j] = true;
                    trace.reseeded.push(j);
                    // restart from the worst-explained sample
                    let worst = (0..m)
                        .min_by(|&a, &b| stats[a].0.total_cmp(&stats[b].0))
                        .expect("non-empty data");
                    weights[j] = 1.0 / m as f64;
                    means[j] = if opts.zero_mean { CVec::zeros(n) } else { data[worst].clone() };
                    covs[j] = loaded(global_cov.clone());
                }
            }
        }
        trace.iterations += 1;
    }
    let model = GmmModel::full(weights, means, covs, shape)?;
    Ok((model, trace))
}

fn build_densities(means: &[CVec], covs: &[CMat]) -> Result<Vec<GaussianDensity>> {
    means
        .iter()
        .zip(covs)
        .map(|(m, c)| GaussianDensity::new(m.clone(), c))
        .collect()
}

fn mean_of(data: &[CVec]) -> CVec {
    let ones = vec![1.0; data.len()];
    weighted_mean(data, &ones, data.len() as f64)
}

fn weighted_mean(data: &[CVec], w: &[f64], total: f64) -> CVec {
    let n = data[0].len();
    let mut acc = vec![ZERO; n];
    for (x, &wi) in data.iter().zip(w) {
        if wi <= RESP_FLOOR {
            continue;
        }
        for (a, z) in acc.iter_mut().zip(x.iter()) {
            *a += z * wi;
        }
    }
    CVec::from_iterator(n, acc.into_iter().map(|a| a / total))
}

/// `Σ_i w_i (x_i − μ)(x_i − μ)ᴴ`, Hermitian by construction.
fn scatter(data: &[CVec], w: &[f64], mean: &CVec) -> CMat {
    let n = mean.len();
    let mut packed = vec![ZERO; n * (n + 1) / 2];
    let mut d = vec![ZERO; n];
    for (x, &wi) in data.iter().zip(w) {
        if wi <= RESP_FLOOR {
            continue;
        }
        for ((di, xi), mi) in d.iter_mut().zip(x.iter()).zip(mean.iter()) {
            *di = xi - mi;
        }
        let mut off = 0;
        for i in 0..n {
            let s = d[i] * wi;
            let row = &mut packed[off..off + i + 1];
            for (p, dj) in row.iter_mut().zip(&d[..=i]) {
                *p += s * dj.conj();
            }
            off += i + 1;
        }
    }
    let mut c = CMat::zeros(n, n);
    let mut off = 0;
    for i in 0..n {
        for j in 0..=i {
            let v = packed[off + j];
            c[(i, j)] = v;
            c[(j, i)] = v.conj();
        }
        c[(i, i)].im = 0.0;
        off += i + 1;
    }
    c
}

fn sq_dist(a: &CVec, b: &CVec) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum()
}

fn nearest(x: &CVec, centers: &[CVec]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding followed by `iters` Lloyd iterations; returns labels.
fn kmeans_pp<R: Rng + ?Sized>(data: &[CVec], k: usize, iters: usize, rng: &mut R) -> Vec<usize> {
    let m = data.len();
    let mut centers = vec![data[rng.random_range(0..m)].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..m)
        };
        centers.push(data[pick].clone());
        let c = centers.last().expect("just pushed");
        for (di, x) in d2.iter_mut().zip(data) {
            *di = di.min(sq_dist(x, c));
        }
    }
    let mut labels: Vec<usize> = data.iter().map(|x| nearest(x, &centers).0).collect();
    for _ in 0..iters {
        let n = data[0].len();
        let mut sums = vec![CVec::zeros(n); k];
        let mut counts = vec![0usize; k];
        for (x, &l) in data.iter().zip(&labels) {
            sums[l] += x;
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = &sums[j] / C64::new(counts[j] as f64, 0.0);
            }
        }
        let next: Vec<usize> = data.iter().map(|x| nearest(x, &centers).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}
