//! Transmit-covariance codebooks (Lloyd, GMM-based), directional codebooks
//! and the projected-gradient sum-rate solver behind them.

use std::f64::consts::LN_2;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelDataset;
use crate::error::{Error, Result};
use crate::gmm::{argmax, most_responsible, GmmModel};
use crate::io::{read_header, write_header, BlobReader, BlobWriter};
use crate::linalg::{
    cholesky_lower, complex_normal_mat, hermitize, identity, is_hermitian, log2_det_identity_plus, vec_of,
    water_fill, CMat, HermitianEig, C64,
};
use crate::par::{map_range, map_slice, Execution};
use crate::rng::seeded;

/// `log₂ det(I + H Q Hᴴ / σ²)`.
pub fn spectral_efficiency(h: &CMat, q: &CMat, sigma2: f64) -> Result<f64> {
    if q.nrows() != h.ncols() || q.ncols() != h.ncols() {
        return Err(Error::arg("Q must be N_tx × N_tx"));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::arg("noise variance must be positive"));
    }
    let scale = q.norm().max(1.0);
    if !is_hermitian(q, 1e-10 * scale) || HermitianEig::new(q).min() < -1e-10 * scale {
        return Err(Error::arg("Q must be Hermitian positive semidefinite"));
    }
    Ok(rate(h, q, sigma2))
}

/// Unchecked `log₂ det(I + H Q Hᴴ / σ²)` for PSD `Q`.
pub fn rate(h: &CMat, q: &CMat, sigma2: f64) -> f64 {
    let mut m = h * q * h.adjoint() / C64::new(sigma2, 0.0);
    hermitize(&mut m);
    log2_det_identity_plus(&m).max(0.0)
}

/// Euclidean projection of the eigenvalues onto `{λ ≥ 0, Σλ ≤ ρ}`.
pub fn project_capped_simplex(values: &[f64], rho: f64) -> Vec<f64> {
    let clipped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= rho {
        return clipped;
    }
    // projection onto {λ ≥ 0, Σλ = ρ}: find the threshold θ with Σ (λ − θ)₊ = ρ
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - rho) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    values.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Projection of a Hermitian matrix onto `{Q ⪰ 0, tr Q ≤ ρ}`.
pub fn project_psd_trace(q_raw: &CMat, rho: f64) -> CMat {
    let eig = HermitianEig::new(q_raw);
    let projected = project_capped_simplex(&eig.values, rho);
    let mut scaled = eig.vectors.clone();
    for (j, &p) in projected.iter().enumerate() {
        scaled.column_mut(j).scale_mut(p.sqrt());
    }
    let mut q = &scaled * scaled.adjoint();
    hermitize(&mut q);
    q
}

#[derive(Clone, Debug)]
pub struct PgaOptions {
    pub max_iter: usize,
    pub step_init: f64,
    /// Stop when an accepted step gains less than this (bits/s/Hz).
    pub tol: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for PgaOptions {
    fn default() -> Self {
        PgaOptions {
            max_iter: 200,
            step_init: 1.0,
            tol: 1e-8,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PgaResult {
    pub q: CMat,
    /// Mean rate of the initial point and after each accepted step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Mean rate `(1/|V|) Σ r(H, Q)` and its gradient in `Q`.
fn objective_and_gradient(cluster: &[CMat], q: &CMat, sigma2: f64) -> (f64, CMat) {
    let n = q.nrows();
    let mut grad = CMat::zeros(n, n);
    let mut total = 0.0;
    for h in cluster {
        let nrx = h.nrows();
        let mut m = h * q * h.adjoint() + identity(nrx) * C64::new(sigma2, 0.0);
        hermitize(&mut m);
        let l = cholesky_lower(&m).expect("σ² I + H Q Hᴴ is positive definite");
        total += 2.0 * (0..nrx).map(|i| l[(i, i)].re.ln()).sum::<f64>() - nrx as f64 * sigma2.ln();
        let mut x = h.clone();
        l.solve_lower_triangular_mut(&mut x);
        grad += x.ad_mul(&x);
    }
    let scale = 1.0 / (cluster.len() as f64 * LN_2);
    grad *= C64::new(scale, 0.0);
    hermitize(&mut grad);
    (total * scale, grad)
}

pub fn mean_rate(cluster: &[CMat], q: &CMat, sigma2: f64) -> f64 {
    objective_and_gradient(cluster, q, sigma2).0
}

/// Projected gradient ascent on the mean rate of `cluster` over
/// `{Q ⪰ 0, tr Q ≤ ρ}` with Armijo backtracking. Starts from `warm` or
/// `(ρ/N_tx) I`.
pub fn pga_sum_rate(cluster: &[CMat], rho: f64, sigma2: f64, opts: &PgaOptions, warm: Option<&CMat>) -> Result<PgaResult> {
    let first = cluster.first().ok_or_else(|| Error::arg("PGA on an empty cluster"))?;
    if !(rho > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::arg("rho and sigma2 must be positive"));
    }
    let ntx = first.ncols();
    if cluster.iter().any(|h| h.ncols() != ntx) {
        return Err(Error::arg("cluster channels differ in N_tx"));
    }
    let mut q = match warm {
        Some(w) => project_psd_trace(w, rho),
        None => identity(ntx) * C64::new(rho / ntx as f64, 0.0),
    };
    let (mut f, mut grad) = objective_and_gradient(cluster, &q, sigma2);
    let mut objective = vec![f];
    let mut step = opts.step_init;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        // try a larger step than last time, then backtrack
        let mut t = step * 2.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let candidate = project_psd_trace(&(&q + &grad * C64::new(t, 0.0)), rho);
            let (f_new, g_new) = objective_and_gradient(cluster, &candidate, sigma2);
            let ascent = (grad.adjoint() * (&candidate - &q)).trace().re;
            if f_new >= f + opts.armijo * ascent && f_new >= f {
                accepted = Some((candidate, f_new, g_new));
                break;
            }
            t *= opts.shrink;
        }
        let Some((q_new, f_new, g_new)) = accepted else {
            converged = true;
            break;
        };
        let gain = f_new - f;
        step = t;
        q = q_new;
        f = f_new;
        grad = g_new;
        objective.push(f);
        if gain < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(PgaResult {
        q,
        objective,
        iterations,
        converged,
    })
}

/// Water-filling over the top-`N_rx` eigenpairs of `S = mean HᴴH`.
pub fn lau_update(cluster: &[CMat], rho: f64, sigma2: f64) -> Result<CMat> {
    let first = cluster.first().ok_or_else(|| Error::arg("Lau update on an empty cluster"))?;
    let n = first.ncols();
    let mut s = CMat::zeros(n, n);
    for h in cluster {
        s += h.ad_mul(h);
    }
    s /= C64::new(cluster.len() as f64, 0.0);
    Ok(water_fill_gram(&s, first.nrows(), rho, sigma2))
}

/// `Σ p_i v_i v_iᴴ` with water-filling powers over the top `r` eigenpairs of `s`.
pub fn water_fill_gram(s: &CMat, r: usize, rho: f64, sigma2: f64) -> CMat {
    let eig = HermitianEig::new(s);
    let r = r.min(eig.values.len());
    let gains: Vec<f64> = eig.values[..r].iter().map(|l| l.max(0.0) / sigma2).collect();
    let powers = water_fill(&gains, rho);
    let n = s.nrows();
    let mut q = CMat::zeros(n, n);
    for (i, p) in powers.iter().enumerate() {
        if *p > 0.0 {
            let v = eig.vectors.column(i);
            q += v * v.adjoint() * C64::new(*p, 0.0);
        }
    }
    hermitize(&mut q);
    q
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovCodebook {
    pub entries: Vec<CMat>,
    pub design_snr_db: f64,
    pub rho: f64,
}

impl CovCodebook {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Trace and PSD constraints of every entry.
    pub fn validate(&self) -> Result<()> {
        for (k, q) in self.entries.iter().enumerate() {
            let tr: f64 = q.diagonal().iter().map(|z| z.re).sum();
            if tr > self.rho + 1e-8 {
                return Err(Error::validation(format!("entries[{k}]"), format!("trace {tr} exceeds {}", self.rho)));
            }
            if HermitianEig::new(q).min() < -1e-10 {
                return Err(Error::validation(format!("entries[{k}]"), "not positive semidefinite"));
            }
        }
        Ok(())
    }

    /// Factors `F_k` with `F_k F_kᴴ = Q_k`, dropping null directions.
    pub fn rate_evaluator(&self) -> RateEvaluator {
        RateEvaluator::new(&self.entries)
    }
}

/// Evaluates `r(H, Q_k)` for many channels through low-rank factors.
#[derive(Clone, Debug)]
pub struct RateEvaluator {
    factors: Vec<CMat>,
}

impl RateEvaluator {
    pub fn new(entries: &[CMat]) -> Self {
        let factors = entries
            .iter()
            .map(|q| {
                let eig = HermitianEig::new(q);
                let floor = 1e-14 * eig.max().max(0.0);
                let keep: Vec<usize> = (0..eig.values.len()).filter(|&i| eig.values[i] > floor).collect();
                CMat::from_fn(q.nrows(), keep.len(), |r, c| {
                    eig.vectors[(r, keep[c])] * eig.values[keep[c]].sqrt()
                })
            })
            .collect();
        RateEvaluator { factors }
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn rate(&self, h: &CMat, k: usize, sigma2: f64) -> f64 {
        let f = &self.factors[k];
        if f.ncols() == 0 {
            return 0.0;
        }
        let g = h * f;
        let mut m = &g * g.adjoint() / C64::new(sigma2, 0.0);
        hermitize(&mut m);
        log2_det_identity_plus(&m).max(0.0)
    }

    pub fn rates(&self, h: &CMat, sigma2: f64) -> Vec<f64> {
        (0..self.factors.len()).map(|k| self.rate(h, k, sigma2)).collect()
    }

    /// `argmax_k r(H, Q_k)`, lowest index on ties.
    pub fn best(&self, h: &CMat, sigma2: f64) -> (usize, f64) {
        let rates = self.rates(h, sigma2);
        let k = argmax(&rates);
        (k, rates[k])
    }
}

#[derive(Clone, Debug)]
pub struct LloydOptions {
    pub max_outer: usize,
    pub pga: PgaOptions,
    pub seed: u64,
    /// Replace the PGA update by the Lau heuristic.
    pub lau: bool,
    pub exec: Execution,
}

impl Default for LloydOptions {
    fn default() -> Self {
        LloydOptions {
            max_outer: 30,
            pga: PgaOptions {
                max_iter: 30,
                ..PgaOptions::default()
            },
            seed: 0,
            lau: false,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LloydTrace {
    /// Mean rate `(1/M) Σ_k Σ_{H ∈ V_k} r(H, Q_k)` after each update stage.
    pub after_update: Vec<f64>,
    /// Mean selected rate after each assignment stage (before re-seeding).
    pub after_assignment: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
    pub reseeds: usize,
}

fn design_snr_db(sigma2: f64) -> f64 {
    -10.0 * sigma2.log10()
}

/// Lloyd clustering of `train` into `k` transmit covariances.
pub fn lloyd_codebook(train: &ChannelDataset, k: usize, rho: f64, sigma2: f64, opts: &LloydOptions) -> Result<(CovCodebook, LloydTrace)> {
    lloyd_codebook_of(&train.channels, k, rho, sigma2, opts)
}

pub fn lloyd_codebook_of(channels: &[CMat], k: usize, rho: f64, sigma2: f64, opts: &LloydOptions) -> Result<(CovCodebook, LloydTrace)> {
    let m = channels.len();
    if k == 0 || m < k {
        return Err(Error::arg(format!("{m} channels cannot form {k} clusters")));
    }
    if !(rho > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::arg("rho and sigma2 must be positive"));
    }
    let ntx = channels[0].ncols();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut seeded(opts.seed));
    let mut labels = vec![0usize; m];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = pos % k;
    }
    let mut entries = vec![identity(ntx) * C64::new(rho / ntx as f64, 0.0); k];
    let mut warm: Vec<Option<CMat>> = vec![None; k];
    let mut trace = LloydTrace::default();
    loop {
        // update stage
        let members = cluster_members(&labels, k);
        let updated = map_range(opts.exec, k, |j| -> Result<(CMat, f64)> {
            let cluster: Vec<CMat> = members[j].iter().map(|&i| channels[i].clone()).collect();
            let q = if opts.lau {
                lau_update(&cluster, rho, sigma2)?
            } else {
                pga_sum_rate(&cluster, rho, sigma2, &opts.pga, warm[j].as_ref())?.q
            };
            let total = mean_rate(&cluster, &q, sigma2) * cluster.len() as f64;
            Ok((q, total))
        });
        let mut total = 0.0;
        for (j, res) in updated.into_iter().enumerate() {
            let (q, t) = res?;
            entries[j] = q;
            total += t;
        }
        trace.after_update.push(total / m as f64);
        trace.outer_iterations += 1;

        // assignment stage
        let eval = RateEvaluator::new(&entries);
        let best = map_slice(opts.exec, channels, |h| eval.best(h, sigma2));
        trace
            .after_assignment
            .push(best.iter().map(|b| b.1).sum::<f64>() / m as f64);
        let mut next: Vec<usize> = best.iter().map(|b| b.0).collect();
        warm = entries.iter().cloned().map(Some).collect();
        reseed_empty(&mut next, &best, k, &entries, &mut warm, &mut trace.reseeds);
        if next == labels {
            trace.converged = true;
            break;
        }
        labels = next;
        if trace.outer_iterations >= opts.max_outer {
            break;
        }
    }
    let cb = CovCodebook {
        entries,
        design_snr_db: design_snr_db(sigma2),
        rho,
    };
    Ok((cb, trace))
}

fn cluster_members(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
}

/// Moves the worst-served member of the largest cluster into each empty
/// cluster; the new cluster starts from the covariance that served it.
fn reseed_empty(
    labels: &mut [usize],
    best: &[(usize, f64)],
    k: usize,
    entries: &[CMat],
    warm: &mut [Option<CMat>],
    reseeds: &mut usize,
) {
    for empty in 0..k {
        let members = cluster_members(labels, k);
        if !members[empty].is_empty() {
            continue;
        }
        let largest = (0..k).max_by_key(|&j| (members[j].len(), std::cmp::Reverse(j))).expect("k ≥ 1");
        if members[largest].len() < 2 {
            continue;
        }
        let worst = *members[largest]
            .iter()
            .min_by(|&&a, &&b| best[a].1.total_cmp(&best[b].1))
            .expect("non-empty cluster");
        labels[worst] = empty;
        warm[empty] = Some(entries[largest].clone());
        *reseeds += 1;
    }
}

#[derive(Clone, Debug, Default)]
pub struct GmmCodebookOptions {
    pub pga: PgaOptions,
    pub exec: Execution,
}

/// `E[HᴴH]` under component `k`, from `C_k + μ_k μ_kᴴ`.
pub fn component_gram(model: &GmmModel, k: usize) -> CMat {
    let (nrx, ntx) = model.shape();
    let mu = &model.means()[k];
    let r = model.covariance(k) + mu * mu.adjoint();
    let mut s = CMat::zeros(ntx, ntx);
    for a in 0..ntx {
        for b in 0..ntx {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..nrx {
                acc += r[(i + nrx * a, i + nrx * b)];
            }
            s[(a, b)] = acc.conj();
        }
    }
    hermitize(&mut s);
    s
}

/// Partition of `channels` by the most responsible component.
pub fn gmm_partition(model: &GmmModel, channels: &[CMat], exec: Execution) -> Result<Vec<usize>> {
    if channels.iter().any(|h| h.shape() != model.shape()) {
        return Err(Error::arg("channel shape does not match the model"));
    }
    map_slice(exec, channels, |h| most_responsible(model, &vec_of(h)))
        .into_iter()
        .collect()
}

/// One transmit covariance per GMM component, fitted to the training
/// channels the component is most responsible for.
pub fn gmm_codebook(model: &GmmModel, train: &ChannelDataset, rho: f64, sigma2: f64, opts: &GmmCodebookOptions) -> Result<CovCodebook> {
    gmm_codebook_of(model, &train.channels, rho, sigma2, opts)
}

pub fn gmm_codebook_of(model: &GmmModel, channels: &[CMat], rho: f64, sigma2: f64, opts: &GmmCodebookOptions) -> Result<CovCodebook> {
    let k = model.n_components();
    let labels = gmm_partition(model, channels, opts.exec)?;
    let members = cluster_members(&labels, k);
    let entries = map_range(opts.exec, k, |j| -> Result<CMat> {
        if members[j].is_empty() {
            return Ok(water_fill_gram(&component_gram(model, j), model.shape().0, rho, sigma2));
        }
        let cluster: Vec<CMat> = members[j].iter().map(|&i| channels[i].clone()).collect();
        Ok(pga_sum_rate(&cluster, rho, sigma2, &opts.pga, None)?.q)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(CovCodebook {
        entries,
        design_snr_db: design_snr_db(sigma2),
        rho,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirCodebook {
    pub entries: Vec<CMat>,
}

impl DirCodebook {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `X̄ᴴX̄ = I` within `1e-9` for every entry.
    pub fn validate(&self) -> Result<()> {
        for (k, x) in self.entries.iter().enumerate() {
            if (x.ad_mul(x) - identity(x.ncols())).norm() > 1e-9 {
                return Err(Error::validation(format!("entries[{k}]"), "not semi-unitary"));
            }
        }
        Ok(())
    }
}

/// Dominant `nrx`-dimensional eigenspaces of the covariance entries.
pub fn extract_directions(cb: &CovCodebook, nrx: usize) -> Result<DirCodebook> {
    let mut entries = Vec::with_capacity(cb.len());
    for (index, q) in cb.entries.iter().enumerate() {
        if nrx == 0 || nrx > q.nrows() {
            return Err(Error::arg(format!("cannot extract {nrx} directions from {0}×{0} entries", q.nrows())));
        }
        let eig = HermitianEig::new(q);
        let top = eig.max();
        let ratio = if top > 0.0 { eig.values[nrx - 1] / top } else { 0.0 };
        if !(ratio > 1e-8) {
            return Err(Error::RankDeficient {
                index,
                required: nrx,
                ratio,
            });
        }
        entries.push(eig.vectors.columns(0, nrx).into_owned());
    }
    Ok(DirCodebook { entries })
}

/// `k` orthonormalized i.i.d. Gaussian `ntx × nrx` matrices.
pub fn random_grassmann_codebook<R: Rng + ?Sized>(k: usize, ntx: usize, nrx: usize, rng: &mut R) -> Result<DirCodebook> {
    if nrx == 0 || nrx > ntx {
        return Err(Error::arg(format!("need 1 ≤ nrx ≤ ntx, got nrx = {nrx}, ntx = {ntx}")));
    }
    let entries = (0..k)
        .map(|_| {
            let g = complex_normal_mat(rng, ntx, nrx);
            g.qr().q()
        })
        .collect();
    Ok(DirCodebook { entries })
}

/// Squared chordal distance `nrx − ‖X̄ᴴ Ȳ‖²_F` between subspaces.
pub fn chordal_distance_sq(x: &CMat, y: &CMat) -> f64 {
    (x.ncols() as f64 - x.ad_mul(y).norm_squared()).max(0.0)
}

const CODEBOOK_FORMAT: &str = "gmmfb-codebook";

#[derive(Serialize, Deserialize)]
struct CodebookHeader {
    format: String,
    version: u32,
    kind: String,
    k: usize,
    rows: usize,
    cols: usize,
    design_snr_db: f64,
    rho: f64,
}

fn write_entries(path: &Path, header: CodebookHeader, entries: &[CMat]) -> Result<()> {
    let mut blob = BlobWriter::create(path)?;
    for e in entries {
        blob.matrix(e)?;
    }
    blob.finish()?;
    write_header(path, &header)
}

fn read_entries(path: &Path, kind: &str) -> Result<(CodebookHeader, Vec<CMat>)> {
    let h: CodebookHeader = read_header(path)?;
    if h.format != CODEBOOK_FORMAT || h.version != 1 || h.kind != kind {
        return Err(Error::Format(format!("not a {kind} codebook file")));
    }
    let mut blob = BlobReader::open(path)?;
    let entries = (0..h.k).map(|_| blob.matrix(h.rows, h.cols)).collect::<Result<Vec<_>>>()?;
    blob.expect_end()?;
    Ok((h, entries))
}

fn entry_dims(entries: &[CMat]) -> (usize, usize) {
    entries.first().map(|e| e.shape()).unwrap_or((0, 0))
}

pub fn write_cov_codebook(cb: &CovCodebook, path: &Path) -> Result<()> {
    let (rows, cols) = entry_dims(&cb.entries);
    let header = CodebookHeader {
        format: CODEBOOK_FORMAT.into(),
        version: 1,
        kind: "covariance".into(),
        k: cb.len(),
        rows,
        cols,
        design_snr_db: cb.design_snr_db,
        rho: cb.rho,
    };
    write_entries(path, header, &cb.entries)
}

pub fn read_cov_codebook(path: &Path) -> Result<CovCodebook> {
    let (h, entries) = read_entries(path, "covariance")?;
    Ok(CovCodebook {
        entries,
        design_snr_db: h.design_snr_db,
        rho: h.rho,
    })
}

pub fn write_dir_codebook(cb: &DirCodebook, path: &Path) -> Result<()> {
    let (rows, cols) = entry_dims(&cb.entries);
    let header = CodebookHeader {
        format: CODEBOOK_FORMAT.into(),
        version: 1,
        kind: "directional".into(),
        k: cb.len(),
        rows,
        cols,
        design_snr_db: f64::NAN,
        rho: f64::NAN,
    };
    write_entries(path, header, &cb.entries)
}

pub fn read_dir_codebook(path: &Path) -> Result<DirCodebook> {
    let (_, entries) = read_entries(path, "directional")?;
    Ok(DirCodebook { entries })
}
