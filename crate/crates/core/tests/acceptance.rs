use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use gmm_feedback::channel::{generate_scenario, normalize_dataset, ScenarioConfig};
use gmm_feedback::codebooks::{
    lloyd_codebook_of, pga_sum_rate, project_psd_trace, random_grassmann_codebook, spectral_efficiency, CovCodebook, LloydOptions,
    PgaOptions, RateEvaluator,
};
use gmm_feedback::estimators::{estimate_gmm, estimate_lmmse, sample_covariance, LmmseEstimator};
use gmm_feedback::feedback::{
    dominant_subspace, select_by_chordal, select_by_rate_cov, select_by_rate_eval, select_by_rate_subspace, select_by_responsibility,
    select_by_responsibility_perfect,
};
use gmm_feedback::gmm::{adapt_to_observation, fit_em, responsibilities, AdaptedGmm, EmOptions, GmmModel, ModelShape};
use gmm_feedback::harness::{run_experiment_with, sigma2_of, write_outputs, ExperimentConfig, ExperimentResult};
use gmm_feedback::linalg::{complex_normal_mat, complex_normal_vec, hermitize, identity, real_trace, unvec, vec_of, CMat, CVec, C64};
use gmm_feedback::par::{with_threads, Execution};
use gmm_feedback::pilots::ObservationModel;
use gmm_feedback::precoding::{sum_rate, swmmse, swmmse_monitored, waterfilling_capacity, wmmse, wmmse_with_tol, SwmmseOptions, DEFAULT_I_MAX};
use gmm_feedback::rng::{seeded, SimRng};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: Option<u64>, outcome: Outcome) -> Outcome {
    let secs = elapsed.as_secs_f64();
    let limit_s = limit_s.unwrap_or(u64::MAX);
    match outcome {
        Ok(d) if secs < limit_s as f64 => Ok(format!("{d} ({secs:.1} s)")),
        Ok(d) => Err(format!("{d}, but took {secs:.1} s (limit {limit_s} s)")),
        Err(d) => Err(format!("{d} ({secs:.1} s)")),
    }
}

fn random_hpd(rng: &mut SimRng, n: usize) -> CMat {
    let x = complex_normal_mat(rng, n, n);
    let mut c = &x * x.adjoint() / C64::new(n as f64, 0.0) + identity(n) * C64::new(0.2, 0.0);
    hermitize(&mut c);
    c
}

fn random_trace_one(rng: &mut SimRng, n: usize) -> CMat {
    let c = random_hpd(rng, n);
    project_psd_trace(&(&c / C64::new(real_trace(&c), 0.0)), 1.0)
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

fn vec_rel_err(got: &CVec, want: &CVec) -> f64 {
    (got - want).norm() / want.norm().max(f64::MIN_POSITIVE)
}

/// `ln N_C(x; μ, C)` through an explicit determinant and inverse.
fn log_pdf_oracle(x: &CVec, mean: &CVec, cov: &CMat) -> f64 {
    let d = x - mean;
    let inv = cov.clone().try_inverse().expect("invertible covariance");
    let quad = (d.adjoint() * inv * &d)[(0, 0)].re;
    let det = cov.clone().determinant().re;
    -(x.len() as f64) * std::f64::consts::PI.ln() - det.ln() - quad
}

fn posterior_oracle(weights: &[f64], means: &[CVec], covs: &[CMat], x: &CVec) -> Vec<f64> {
    let joint: Vec<f64> = (0..weights.len())
        .map(|k| weights[k].ln() + log_pdf_oracle(x, &means[k], &covs[k]))
        .collect();
    let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = joint.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn log2_det_oracle(m: &CMat) -> f64 {
    m.clone().determinant().re.log2()
}

fn rate_oracle(h: &CMat, q: &CMat, sigma2: f64) -> f64 {
    log2_det_oracle(&(identity(h.nrows()) + h * q * h.adjoint() / C64::new(sigma2, 0.0)))
}

/// `Some` on an unambiguous winner, `None` when the top two are within `1e-9`.
fn clear_best(values: &[f64], maximize: bool) -> Option<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let o = values[a].total_cmp(&values[b]);
        if maximize {
            o.reverse()
        } else {
            o
        }
    });
    if values.len() > 1 && (values[order[0]] - values[order[1]]).abs() <= 1e-9 * values[order[0]].abs().max(1.0) {
        return None;
    }
    Some(order[0])
}

fn index_agrees(got: usize, values: &[f64], maximize: bool) -> bool {
    clear_best(values, maximize).is_none_or(|best| best == got)
}

fn parameter_counts() -> Outcome {
    let full = ModelShape::Full { k: 64, n: 512 }.parameter_count();
    let (nrx, ntx) = (16, 32);
    let kron = GmmModel::kronecker(
        vec![1.0; 64],
        vec![CVec::zeros(nrx * ntx); 64],
        vec![identity(ntx); 16],
        vec![identity(nrx); 4],
        (nrx, ntx),
    )
    .map_err(|e| e.to_string())?
    .parameter_count();
    let small = GmmModel::full(vec![1.0; 3], vec![CVec::zeros(4); 3], vec![identity(4); 3], (2, 2))
        .map_err(|e| e.to_string())?
        .parameter_count();
    check(
        full == 8_404_992 && kron == 8_992 && small == 30,
        format!("full K=64 N=512: {full}, Kronecker (16,4): {kron}"),
    )
}

struct OracleInstance {
    model: GmmModel,
    weights: Vec<f64>,
    means: Vec<CVec>,
    covs: Vec<CMat>,
    obs: ObservationModel,
    h: CMat,
}

fn oracle_instance(rng: &mut SimRng) -> OracleInstance {
    let nrx = rng.random_range(1..=2);
    let ntx = if nrx == 1 { rng.random_range(2..=8) } else { rng.random_range(2..=4) };
    let n = nrx * ntx;
    let k = rng.random_range(1..=4);
    let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let means: Vec<CVec> = (0..k).map(|_| complex_normal_vec(rng, n, 0.5)).collect();
    let covs: Vec<CMat> = (0..k).map(|_| random_hpd(rng, n)).collect();
    let model = GmmModel::full(weights.clone(), means.clone(), covs.clone(), (nrx, ntx)).unwrap();
    let n_p = rng.random_range(1..=ntx);
    let sigma2 = sigma2_of(rng.random_range(-5.0..20.0));
    let obs = ObservationModel::new(ntx, 1, nrx, n_p, 1.0, sigma2).unwrap();
    let h = complex_normal_mat(rng, nrx, ntx);
    OracleInstance {
        model,
        weights,
        means,
        covs,
        obs,
        h,
    }
}

fn oracle_suite() -> Outcome {
    const INSTANCES: usize = 60;
    const TOL: f64 = 1e-8;
    let mut rng = seeded(0x0ac1e);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for i in 0..INSTANCES {
        let inst = oracle_instance(&mut rng);
        let OracleInstance { model, weights, means, covs, obs, h } = &inst;
        let (nrx, ntx) = model.shape();
        let a = &obs.operator;
        let sigma2 = obs.sigma2;
        let mut note = |name: &str, err: f64| {
            worst = worst.max(err);
            if err.is_nan() || err > TOL {
                failures.push(format!("{name} #{i}: {err:.2e}"));
            }
        };

        // responsibilities in the channel domain
        let x = vec_of(h);
        let got = CVec::from_vec(responsibilities(model, &x).unwrap().into_iter().map(|v| C64::new(v, 0.0)).collect());
        let want = CVec::from_vec(posterior_oracle(weights, means, covs, &x).into_iter().map(|v| C64::new(v, 0.0)).collect());
        note("responsibilities", vec_rel_err(&got, &want));

        // spectral efficiency
        let q = random_trace_one(&mut rng, ntx);
        note("spectral_efficiency", rel_err(spectral_efficiency(h, &q, sigma2).unwrap(), rate_oracle(h, &q, sigma2)));

        // GMM estimator against the per-component LMMSE mixture
        let y = obs.observe(h, &mut rng).unwrap();
        let adapted = adapt_to_observation(Arc::new(model.clone()), a, sigma2).unwrap();
        let covs_y: Vec<CMat> = covs
            .iter()
            .map(|c| a * c * a.adjoint() + identity(a.nrows()) * C64::new(sigma2, 0.0))
            .collect();
        let means_y: Vec<CVec> = means.iter().map(|m| a * m).collect();
        let post_y = posterior_oracle(weights, &means_y, &covs_y, &y);
        let mut want = CVec::zeros(nrx * ntx);
        for k in 0..weights.len() {
            let inv = covs_y[k].clone().try_inverse().unwrap();
            let part = &means[k] + &covs[k] * a.adjoint() * inv * (&y - &means_y[k]);
            want += part * C64::new(post_y[k], 0.0);
        }
        note("estimate_gmm", vec_rel_err(&estimate_gmm(&adapted, &y).unwrap(), &want));

        // LMMSE with an arbitrary covariance
        let c = random_hpd(&mut rng, nrx * ntx);
        let inv = (a * &c * a.adjoint() + identity(a.nrows()) * C64::new(sigma2, 0.0)).try_inverse().unwrap();
        let want = &c * a.adjoint() * inv * &y;
        note("estimate_lmmse", vec_rel_err(&estimate_lmmse(&c, a, sigma2, &y).unwrap(), &want));

        // selections
        let mut mismatch = |name: &str, ok: bool| {
            if !ok {
                failures.push(format!("{name} #{i}: index differs from oracle"));
            }
        };
        mismatch(
            "select_by_responsibility",
            index_agrees(select_by_responsibility(&adapted, &y).unwrap().index, &post_y, true),
        );
        mismatch(
            "select_by_responsibility_perfect",
            index_agrees(
                select_by_responsibility_perfect(model, h).unwrap().index,
                &posterior_oracle(weights, means, covs, &x),
                true,
            ),
        );
        let cb = CovCodebook {
            entries: (0..weights.len() + 2).map(|_| random_trace_one(&mut rng, ntx)).collect(),
            design_snr_db: 10.0,
            rho: 1.0,
        };
        let rates: Vec<f64> = cb.entries.iter().map(|q| rate_oracle(h, q, sigma2)).collect();
        mismatch("select_by_rate_cov", index_agrees(select_by_rate_cov(h, &cb, sigma2).unwrap().index, &rates, true));
        if nrx <= ntx {
            let dirs = random_grassmann_codebook(4, ntx, nrx, &mut rng).unwrap();
            let metrics: Vec<f64> = dirs
                .entries
                .iter()
                .map(|w| {
                    let g = h * w;
                    log2_det_oracle(&(identity(nrx) + &g * g.adjoint() / C64::new(sigma2 * nrx as f64, 0.0)))
                })
                .collect();
            mismatch(
                "select_by_rate_subspace",
                index_agrees(select_by_rate_subspace(h, &dirs, 1.0, sigma2).unwrap().index, &metrics, true),
            );
            let v = dominant_subspace(h);
            let dist: Vec<f64> = dirs
                .entries
                .iter()
                .map(|w| nrx as f64 - (v.adjoint() * w * w.adjoint() * &v).trace().re)
                .collect();
            mismatch("select_by_chordal", index_agrees(select_by_chordal(&v, &dirs).unwrap().index, &dist, false));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{INSTANCES} instances, worst relative error {worst:.1e}")
        } else {
            failures.join("; ")
        },
    )
}

fn nondecreasing(trace: &[f64], slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - slack)
}

fn monotonicity() -> Outcome {
    const SLACK: f64 = 1e-8;
    let mut bad = Vec::new();
    for i in 0..20u64 {
        let mut rng = seeded(1000 + i);
        let nrx = rng.random_range(1..=3);
        let ntx = rng.random_range(2..=6);
        let sigma2 = sigma2_of(rng.random_range(0.0..20.0));
        let cluster: Vec<CMat> = (0..12).map(|_| complex_normal_mat(&mut rng, nrx, ntx)).collect();
        let pga = pga_sum_rate(&cluster, 1.0, sigma2, &PgaOptions::default(), None).unwrap();
        if !nondecreasing(&pga.objective, SLACK) {
            bad.push(format!("PGA #{i}"));
        }

        let channels: Vec<CMat> = (0..60).map(|_| complex_normal_mat(&mut rng, nrx, ntx)).collect();
        let opts = LloydOptions {
            max_outer: 8,
            seed: i,
            ..LloydOptions::default()
        };
        let (_, trace) = lloyd_codebook_of(&channels, 4, 1.0, sigma2, &opts).unwrap();
        if trace.after_update.iter().zip(&trace.after_assignment).any(|(u, a)| *a < u - SLACK) {
            bad.push(format!("Lloyd #{i}"));
        }

        let users = rng.random_range(1..=3);
        let h: Vec<CMat> = (0..users).map(|_| complex_normal_mat(&mut rng, nrx, ntx)).collect();
        let res = wmmse(&h, 1.0, sigma2, nrx.min(ntx), 100).unwrap();
        if !nondecreasing(&res.trace, SLACK) {
            bad.push(format!("WMMSE #{i}"));
        }
    }
    check(bad.is_empty(), if bad.is_empty() { "20 instances each for PGA, Lloyd assignment and WMMSE".into() } else { bad.join(", ") })
}

fn single_user_wmmse() -> Outcome {
    let mut rng = seeded(44);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let ntx = rng.random_range(1..=8);
        let nrx = rng.random_range(1..=ntx);
        let sigma2 = sigma2_of(rng.random_range(0.0..20.0));
        let h = complex_normal_mat(&mut rng, nrx, ntx);
        let (_, cap) = waterfilling_capacity(&h, 1.0, sigma2).unwrap();
        let res = wmmse_with_tol(std::slice::from_ref(&h), 1.0, sigma2, nrx, 2000, 0.0).unwrap();
        let got = sum_rate(std::slice::from_ref(&h), &res.precoders, sigma2).unwrap();
        worst = worst.max((cap - got).abs());
    }
    check(worst < 1e-3, format!("100 channels, largest gap {worst:.2e} bits"))
}

fn estimator_mse() -> Outcome {
    let mut scenario = ScenarioConfig::new(4, 2, 2);
    scenario.rng_seed = 5;
    scenario.num_paths_range = [3, 8];
    let (_, dl) = generate_scenario(&scenario, 6000, true).map_err(|e| e.to_string())?;
    let train = normalize_dataset(dl).map_err(|e| e.to_string())?;
    let opts = EmOptions {
        init_seed: 3,
        ..EmOptions::default()
    };
    let model = fit_em(&train, 16, &opts).map_err(|e| e.to_string())?;
    let (nrx, ntx) = model.shape();
    let sigma2 = sigma2_of(10.0);
    let obs = ObservationModel::new(4, 2, nrx, ntx / 2, 1.0, sigma2).map_err(|e| e.to_string())?;
    let adapted = adapt_to_observation(Arc::new(model.clone()), &obs.operator, sigma2).map_err(|e| e.to_string())?;
    let lmmse = LmmseEstimator::new(&sample_covariance(&train).unwrap(), &obs.operator, sigma2).map_err(|e| e.to_string())?;
    let pick = WeightedIndex::new(model.weights()).unwrap();
    let mut rng = seeded(17);
    let (mut e_gmm, mut e_lmmse) = (0.0, 0.0);
    for _ in 0..2000 {
        let h = model.sample_channel(pick.sample(&mut rng), &mut rng).unwrap();
        let y = obs.observe(&h, &mut rng).unwrap();
        let x = vec_of(&h);
        e_gmm += (estimate_gmm(&adapted, &y).unwrap() - &x).norm_squared();
        e_lmmse += (lmmse.estimate(&y).unwrap() - &x).norm_squared();
    }
    let margin = 1.0 - e_gmm / e_lmmse;
    check(
        margin >= 0.02,
        format!(
            "MSE GMM {:.4}, LMMSE {:.4}, relative margin {:.1}%",
            e_gmm / 2000.0,
            e_lmmse / 2000.0,
            100.0 * margin
        ),
    )
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

struct Gap {
    mean: f64,
    std_err: f64,
}

/// Mean and standard error of the per-constellation difference `a − b`.
fn paired_gap(res: &ExperimentResult, a: &str, b: &str, snr: f64) -> Gap {
    let (x, y) = (res.values(a, snr), res.values(b, snr));
    let d: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Gap {
        mean,
        std_err: (var / n).sqrt(),
    }
}

fn mean_of(res: &ExperimentResult, method: &str, snr: f64) -> f64 {
    let v = res.values(method, snr);
    v.iter().sum::<f64>() / v.len() as f64
}

fn multi_user_ordering() -> Outcome {
    let cfg = ExperimentConfig::load(&config_dir().join("mu_rbd_5db.toml")).map_err(|e| e.to_string())?;
    let checks_out = cfg.snr_db == [5.0]
        && cfg.scenario.ntx() == 16
        && cfg.scenario.nrx == 4
        && cfg.users == 4
        && cfg.bits == 6
        && cfg.n_p == 8
        && cfg.num_constellations >= 500;
    if !checks_out {
        return Err("configuration does not match the required setup".into());
    }
    let res = run_experiment_with(&cfg, Execution::default()).map_err(|e| e.to_string())?;
    let snr = 5.0;
    let best_random = ["random_h", "random_gmm", "random_lmmse", "random_omp"]
        .into_iter()
        .max_by(|a, b| mean_of(&res, a, snr).total_cmp(&mean_of(&res, b, snr)))
        .unwrap();
    let pairs = [
        ("gmm_y", "lloyd_gmm"),
        ("lloyd_gmm", "lloyd_lmmse"),
        ("lloyd_gmm", "lloyd_omp"),
        ("lloyd_lmmse", best_random),
        ("lloyd_omp", best_random),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (a, b) in pairs {
        let g = paired_gap(&res, a, b, snr);
        ok &= g.mean > 2.0 * g.std_err;
        parts.push(format!("{a} − {b} = {:.3} ± {:.3}", g.mean, g.std_err));
    }
    check(ok, parts.join(", "))
}

struct SelectionBench {
    adapted: AdaptedGmm,
    lmmse: LmmseEstimator,
    eval: RateEvaluator,
    ys: Vec<CVec>,
    shape: (usize, usize),
    sigma2: f64,
}

impl SelectionBench {
    /// `K = 64` components with `N_rx = 4` and `n_p = 4` on an `ntx_h × ntx_v` array.
    fn new(ntx_h: usize, ntx_v: usize) -> Self {
        let (nrx, n_p, k) = (4, 4, 64);
        let ntx = ntx_h * ntx_v;
        let n = nrx * ntx;
        let mut rng = seeded(ntx as u64);
        let covs: Vec<CMat> = (0..k)
            .map(|_| {
                let x = complex_normal_mat(&mut rng, n, 6);
                let mut c = &x * x.adjoint() + identity(n) * C64::new(0.05, 0.0);
                hermitize(&mut c);
                c
            })
            .collect();
        let model = GmmModel::full(vec![1.0; k], vec![CVec::zeros(n); k], covs, (nrx, ntx)).unwrap();
        let sigma2 = sigma2_of(10.0);
        let obs = ObservationModel::new(ntx_h, ntx_v, nrx, n_p, 1.0, sigma2).unwrap();
        let adapted = adapt_to_observation(Arc::new(model), &obs.operator, sigma2).unwrap();
        let lmmse = LmmseEstimator::new(&random_hpd(&mut rng, n), &obs.operator, sigma2).unwrap();
        let entries: Vec<CMat> = (0..k).map(|_| random_trace_one(&mut rng, ntx)).collect();
        let ys = (0..16)
            .map(|_| obs.observe(&complex_normal_mat(&mut rng, nrx, ntx), &mut rng).unwrap())
            .collect();
        SelectionBench {
            adapted,
            lmmse,
            eval: RateEvaluator::new(&entries),
            ys,
            shape: (nrx, ntx),
            sigma2,
        }
    }

    /// Seconds per responsibility selection, averaged over `reps` calls.
    fn responsibility(&self, reps: usize) -> f64 {
        let start = Instant::now();
        for i in 0..reps {
            std::hint::black_box(select_by_responsibility(&self.adapted, &self.ys[i % self.ys.len()]).unwrap());
        }
        start.elapsed().as_secs_f64() / reps as f64
    }

    /// Seconds per LMMSE estimate followed by rate-based selection.
    fn estimate_and_rate(&self, reps: usize) -> f64 {
        let start = Instant::now();
        for i in 0..reps {
            let h = unvec(&self.lmmse.estimate(&self.ys[i % self.ys.len()]).unwrap(), self.shape.0, self.shape.1);
            std::hint::black_box(select_by_rate_eval(&h, &self.eval, self.sigma2).unwrap());
        }
        start.elapsed().as_secs_f64() / reps as f64
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn complexity_scaling() -> Outcome {
    let small = SelectionBench::new(4, 4);
    let large = SelectionBench::new(8, 8);
    small.responsibility(200);
    large.responsibility(200);
    small.estimate_and_rate(20);
    large.estimate_and_rate(20);
    // interleaved rounds, so that drifts in machine speed cancel in each ratio
    let (mut resp, mut rate) = (Vec::new(), Vec::new());
    let (mut resp_16, mut rate_16) = (Vec::new(), Vec::new());
    for _ in 0..31 {
        let r = small.responsibility(50);
        resp.push(large.responsibility(50) / r);
        resp_16.push(r);
        let q = small.estimate_and_rate(10);
        rate.push(large.estimate_and_rate(10) / q);
        rate_16.push(q);
    }
    let (resp_ratio, rate_ratio) = (median(resp), median(rate));
    check(
        (resp_ratio - 1.0).abs() < 0.3 && rate_ratio > 2.0,
        format!(
            "N_tx 16 → 64: responsibility ×{resp_ratio:.2} (median {:.1} µs at 16), estimate + rate ×{rate_ratio:.2} (median {:.1} µs at 16)",
            median(resp_16) * 1e6,
            median(rate_16) * 1e6
        ),
    )
}

fn swmmse_behavior() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..5u64 {
        let mut rng = seeded(300 + i);
        let (nrx, ntx, users) = (2, 6, 3);
        let means: Vec<CVec> = (0..4).map(|_| complex_normal_vec(&mut rng, nrx * ntx, 1.0)).collect();
        let model = GmmModel::full(vec![1.0; 4], means.clone(), vec![CMat::zeros(nrx * ntx, nrx * ntx); 4], (nrx, ntx)).unwrap();
        let k_stars: Vec<usize> = (0..users).map(|j| (j + i as usize) % 4).collect();
        let channels: Vec<CMat> = k_stars.iter().map(|&k| unvec(&means[k], nrx, ntx)).collect();
        let sigma2 = sigma2_of(10.0);
        let res = swmmse(&model, &k_stars, 1.0, sigma2, &SwmmseOptions::default(), &mut rng).unwrap();
        let stochastic = sum_rate(&channels, &res.precoders, sigma2).unwrap();
        let reference = *wmmse(&channels, 1.0, sigma2, nrx, DEFAULT_I_MAX).unwrap().trace.last().unwrap();
        worst = worst.max((stochastic - reference).abs() / reference);
    }
    // expected sum-rate per iteration, estimated on fixed draws from the
    // fed-back components and averaged over instances
    let mut mean_trace = vec![0.0; DEFAULT_I_MAX];
    let instances = 10;
    for i in 0..instances {
        let mut rng = seeded(400 + i);
        let (nrx, ntx) = (2, 6);
        let n = nrx * ntx;
        let means: Vec<CVec> = (0..4).map(|_| complex_normal_vec(&mut rng, n, 1.0)).collect();
        let covs: Vec<CMat> = (0..4).map(|_| random_hpd(&mut rng, n) * C64::new(0.3, 0.0)).collect();
        let model = GmmModel::full(vec![1.0; 4], means, covs, (nrx, ntx)).unwrap();
        let k_stars = [0, 1, 3];
        let sigma2 = sigma2_of(10.0);
        let draws: Vec<Vec<CMat>> = (0..100)
            .map(|_| k_stars.iter().map(|&k| model.sample_channel(k, &mut rng).unwrap()).collect())
            .collect();
        swmmse_monitored(&model, &k_stars, 1.0, sigma2, &SwmmseOptions::default(), &mut rng, |t, ps| {
            let total: f64 = draws.iter().map(|h| sum_rate(h, ps, sigma2).unwrap()).sum();
            mean_trace[t] += total / (draws.len() * instances as usize) as f64;
            Ok(())
        })
        .unwrap();
    }
    let tail = &mean_trace[DEFAULT_I_MAX - 200..];
    let mut worst_dip = 0.0f64;
    let mut peak = tail[0];
    for &v in tail {
        worst_dip = worst_dip.max((peak - v) / peak);
        peak = peak.max(v);
    }
    check(
        worst <= 0.02 && worst_dip <= 0.01,
        format!(
            "deterministic components within {:.2}% of WMMSE, largest dip of the mean trace {:.2}%",
            100.0 * worst,
            100.0 * worst_dip
        ),
    )
}

const SMALL_MU: &str = r#"
mode = "mu"
seed = 77
snr_db = [0.0, 10.0]
n_p = 2
bits = 2
users = 2
precoder = "swmmse"
num_constellations = 6
codebook_design_snr_db = 40.0

[scenario]
ntx_h = 2
ntx_v = 2
nrx = 2
num_paths_range = [3, 8]
angle_spread_deg = 5.0
carrier_offset = 0.079
rng_seed = 4

[data]
train = 160
eval = 30

[gmm]
max_iter = 15

[lloyd]
max_outer = 4

[iterative]
i_max = 30
"#;

const SMALL_P2P: &str = r#"
mode = "p2p"
seed = 78
snr_db = [5.0, 15.0]
n_p = 2
bits = 2

[scenario]
ntx_h = 2
ntx_v = 2
nrx = 2
num_paths_range = [3, 8]
angle_spread_deg = 5.0
carrier_offset = 0.079
rng_seed = 6

[data]
train = 160
eval = 30

[gmm]
max_iter = 15

[lloyd]
max_outer = 4
"#;

fn csv_bytes(cfg: &ExperimentConfig, threads: usize, exec: Execution) -> Result<Vec<(String, Vec<u8>)>, String> {
    let res = with_threads(threads, || run_experiment_with(cfg, exec)).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = write_outputs(&res, dir.path()).map_err(|e| e.to_string())?;
    files
        .iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            std::fs::read(p).map(|b| (name, b)).map_err(|e| e.to_string())
        })
        .collect()
}

fn determinism() -> Outcome {
    let mut compared = 0;
    for text in [SMALL_MU, SMALL_P2P] {
        let cfg = ExperimentConfig::from_toml(text).map_err(|e| e.to_string())?;
        let reference = csv_bytes(&cfg, 1, Execution::Sequential)?;
        for (threads, exec) in [(1, Execution::Parallel), (2, Execution::Parallel), (4, Execution::Parallel)] {
            let other = csv_bytes(&cfg, threads, exec)?;
            if other != reference {
                return Err(format!("{:?} run with {threads} threads differs from the sequential run", cfg.mode));
            }
        }
        compared += reference.len();
    }
    check(true, format!("{compared} CSV files identical across 1, 2 and 4 threads"))
}

fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

type Criterion = (u32, &'static str, Option<u64>, fn() -> Outcome);

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        (1, "parameter counts", Some(1), parameter_counts),
        (2, "oracle equivalence", Some(30), oracle_suite),
        (3, "monotone iterations", Some(120), monotonicity),
        (4, "single-user WMMSE reaches capacity", None, single_user_wmmse),
        (5, "GMM estimator beats LMMSE", Some(300), estimator_mse),
        (6, "multi-user feedback ordering", Some(1800), multi_user_ordering),
        (7, "selection cost independent of N_tx", Some(120), complexity_scaling),
        (8, "SWMMSE sanity", Some(600), swmmse_behavior),
        (9, "thread-count determinism", None, determinism),
    ];
    // ACCEPTANCE_ONLY=3,8 restricts the run to the listed criteria
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, limit_s, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        match &within(start.elapsed(), limit_s, outcome) {
            Ok(d) => report(&format!("criterion {id} PASS  {name}: {d}")),
            Err(d) => {
                report(&format!("criterion {id} FAIL  {name}: {d}"));
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
