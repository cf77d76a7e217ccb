//! End-to-end experiments: data preparation, model and codebook training,
//! Monte Carlo evaluation and CSV output.
//!
//! Every random draw in an experiment comes from a stream selected by the
//! master seed, a purpose label and a task index (see [`crate::rng`]), and
//! results are collected in task order. Reruns therefore produce identical
//! records for any thread count.

pub mod config;
pub mod output;

use std::sync::Arc;

use rand::seq::index::sample as sample_indices;

use crate::channel::{generate_scenario_detailed, normalize_dataset, split_dataset, ChannelDataset};
use crate::codebooks::{
    extract_directions, gmm_codebook_of, lloyd_codebook_of, random_grassmann_codebook, rate, CovCodebook, DirCodebook,
    GmmCodebookOptions, LloydOptions, PgaOptions, RateEvaluator,
};
use crate::error::{Error, Result};
use crate::estimators::{estimate_gmm, estimate_omp_genie_with, sample_covariance, Dictionary, LmmseEstimator};
use crate::feedback::{select_by_rate_eval, select_by_rate_subspace, select_by_responsibility, select_by_responsibility_perfect};
use crate::gmm::{adapt_to_observation, fit_em, fit_kronecker, AdaptedGmm, EmOptions, GmmModel, KroneckerOptions};
use crate::linalg::{unvec, vec_of, CMat, CVec};
use crate::par::{map_range, Execution};
use crate::pilots::ObservationModel;
use crate::precoding::{
    baseline_tx_strategy, rbd, rci, sum_rate, swmmse_monitored, waterfilling_capacity, wmmse_monitored, BaselineKind,
    PrecoderSet, SwmmseOptions,
};
use crate::rng::{derive_seed, purpose, task_rng};

pub use config::{ExperimentConfig, GmmStructure, Mode, PrecoderKind};
pub use output::{eccdf, eccdf_at, summarize, write_outputs, ExperimentResult, Metric, Record, Summary, Trace, TracePoint};

/// Transmit power; the SNR is set through the noise variance.
pub const RHO: f64 = 1.0;

/// `σ² = 10^(−SNR/10)`.
pub fn sigma2_of(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// How a mobile obtains the channel it selects feedback from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Perfect,
    Lmmse,
    Omp,
    Gmm,
}

impl Estimator {
    const ALL: [Estimator; 4] = [Estimator::Perfect, Estimator::Gmm, Estimator::Lmmse, Estimator::Omp];

    fn suffix(self) -> &'static str {
        match self {
            Estimator::Perfect => "h",
            Estimator::Lmmse => "lmmse",
            Estimator::Omp => "omp",
            Estimator::Gmm => "gmm",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Input of the GMM feedback encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Csi {
    /// True channel, responsibilities in the channel domain.
    Perfect,
    /// Pilot observation, responsibilities of the adapted model.
    Observation,
}

/// An evaluated transmit strategy, identified in the CSV files by its label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Water-filling on the true channel.
    Optimal,
    UniPowCov,
    UniPowEigsp,
    /// Lloyd codebook, index chosen by rate on the estimated channel.
    Lloyd(Estimator),
    /// GMM codebook, index chosen by responsibilities.
    Gmm(Csi),
    /// Random Grassmannian codebook, index chosen by rate.
    Random(Estimator),
    /// Stochastic WMMSE on samples of the fed-back components.
    GmmSamples(Csi),
    /// Multi-user precoder on the true channels.
    PerfectCsi,
}

impl Method {
    pub fn label(self) -> String {
        match self {
            Method::Optimal => "optimal".into(),
            Method::UniPowCov => "uni_pow_cov".into(),
            Method::UniPowEigsp => "uni_pow_eigsp".into(),
            Method::Lloyd(e) => format!("lloyd_{}", e.suffix()),
            Method::Random(e) => format!("random_{}", e.suffix()),
            Method::Gmm(Csi::Perfect) => "gmm_h".into(),
            Method::Gmm(Csi::Observation) => "gmm_y".into(),
            Method::GmmSamples(Csi::Perfect) => "gmm_samples_h".into(),
            Method::GmmSamples(Csi::Observation) => "gmm_samples_y".into(),
            Method::PerfectCsi => "perfect_csi".into(),
        }
    }

    /// Every method of `mode`, in CSV order.
    pub fn all(mode: Mode, precoder: PrecoderKind) -> Vec<Method> {
        let mut out = Vec::new();
        match mode {
            Mode::P2p => {
                out.extend([Method::Optimal, Method::UniPowCov, Method::UniPowEigsp]);
                out.extend([Method::Gmm(Csi::Perfect), Method::Gmm(Csi::Observation)]);
                out.extend(Estimator::ALL.map(Method::Lloyd));
            }
            Mode::Mu => {
                out.push(Method::PerfectCsi);
                out.extend([Method::Gmm(Csi::Perfect), Method::Gmm(Csi::Observation)]);
                if precoder == PrecoderKind::Swmmse {
                    out.extend([Method::GmmSamples(Csi::Perfect), Method::GmmSamples(Csi::Observation)]);
                }
                out.extend(Estimator::ALL.map(Method::Lloyd));
                out.extend(Estimator::ALL.map(Method::Random));
            }
        }
        out
    }

    pub fn parse(mode: Mode, label: &str) -> Result<Method> {
        let every = match mode {
            Mode::P2p => Method::all(mode, PrecoderKind::Rbd),
            Mode::Mu => Method::all(mode, PrecoderKind::Swmmse),
        };
        every.into_iter().find(|m| m.label() == label).ok_or_else(|| {
            Error::validation(
                "methods",
                format!("unknown method `{label}` for mode {mode:?}"),
            )
        })
    }

    fn estimator(self) -> Option<Estimator> {
        match self {
            Method::Lloyd(e) | Method::Random(e) => Some(e),
            _ => None,
        }
    }
}

/// Methods selected by the configuration.
pub fn selected_methods(cfg: &ExperimentConfig) -> Result<Vec<Method>> {
    if cfg.methods.is_empty() {
        return Ok(Method::all(cfg.mode, cfg.precoder));
    }
    let mut out: Vec<Method> = Vec::new();
    for label in &cfg.methods {
        let m = Method::parse(cfg.mode, label)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

/// What the selected methods require to be trained.
#[derive(Clone, Copy, Debug, Default)]
struct Needs {
    model: bool,
    lloyd: bool,
    random: bool,
    observation: bool,
    estimators: [bool; 4],
}

impl Needs {
    fn of(methods: &[Method]) -> Self {
        let mut n = Needs::default();
        for &m in methods {
            match m {
                Method::Lloyd(_) => n.lloyd = true,
                Method::Random(_) => n.random = true,
                Method::Gmm(c) | Method::GmmSamples(c) => {
                    n.model = true;
                    n.observation |= c == Csi::Observation;
                }
                _ => {}
            }
            if let Some(e) = m.estimator() {
                n.estimators[e.slot()] = true;
                n.observation |= e != Estimator::Perfect;
                n.model |= e == Estimator::Gmm;
            }
        }
        n
    }

    fn estimator(&self, e: Estimator) -> bool {
        self.estimators[e.slot()]
    }
}

/// Uplink training set (transposed to downlink shape) and downlink
/// evaluation set.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: ChannelDataset,
    pub eval: ChannelDataset,
}

/// Generates `train + eval` correlated UL/DL pairs, normalizes both domains
/// and keeps the first `train` uplink and the last `eval` downlink channels.
pub fn prepare_data(cfg: &ExperimentConfig, exec: Execution) -> Result<Datasets> {
    let total = cfg.data.train + cfg.data.eval;
    let draw = generate_scenario_detailed(&cfg.scenario, total, cfg.data.correlated_pair, exec)?;
    let uplink = normalize_dataset(draw.uplink.transposed())?;
    let downlink = normalize_dataset(draw.downlink)?;
    let (train, _) = split_dataset(uplink, cfg.data.train)?;
    let (_, eval) = split_dataset(downlink, cfg.data.train)?;
    Ok(Datasets { train, eval })
}

pub fn em_options(cfg: &ExperimentConfig, exec: Execution) -> EmOptions {
    EmOptions {
        max_iter: cfg.gmm.max_iter,
        tol: cfg.gmm.tol,
        init_seed: derive_seed(cfg.seed, purpose::EM_INIT),
        zero_mean: cfg.gmm.zero_mean,
        exec,
        ..EmOptions::default()
    }
}

/// Fits the `K = 2^B` component GMM on the training channels.
pub fn fit_model(cfg: &ExperimentConfig, train: &ChannelDataset, exec: Execution) -> Result<GmmModel> {
    let em = em_options(cfg, exec);
    match cfg.gmm.structure {
        GmmStructure::Full => fit_em(train, cfg.k(), &em),
        GmmStructure::Kronecker => {
            let (k_tx, k_rx) = cfg.kronecker_split();
            let opts = KroneckerOptions {
                em,
                ..KroneckerOptions::default()
            };
            fit_kronecker(train, k_tx, k_rx, &opts)
        }
    }
}

pub fn lloyd_options(cfg: &ExperimentConfig, exec: Execution) -> LloydOptions {
    LloydOptions {
        max_outer: cfg.lloyd.max_outer,
        pga: PgaOptions {
            max_iter: cfg.lloyd.pga_iters,
            ..PgaOptions::default()
        },
        seed: derive_seed(cfg.seed, purpose::CODEBOOK),
        exec,
        ..LloydOptions::default()
    }
}

pub fn lloyd_cov_codebook(cfg: &ExperimentConfig, train: &ChannelDataset, sigma2: f64, exec: Execution) -> Result<CovCodebook> {
    Ok(lloyd_codebook_of(&train.channels, cfg.k(), RHO, sigma2, &lloyd_options(cfg, exec))?.0)
}

pub fn gmm_cov_codebook(model: &GmmModel, train: &ChannelDataset, sigma2: f64, exec: Execution) -> Result<CovCodebook> {
    let opts = GmmCodebookOptions {
        exec,
        ..GmmCodebookOptions::default()
    };
    gmm_codebook_of(model, &train.channels, RHO, sigma2, &opts)
}

pub fn random_codebook(cfg: &ExperimentConfig) -> Result<DirCodebook> {
    let mut rng = task_rng(cfg.seed, purpose::CODEBOOK, 0);
    random_grassmann_codebook(cfg.k(), cfg.scenario.ntx(), cfg.scenario.nrx, &mut rng)
}

/// Trained state shared by all SNR points.
struct Trained {
    data: Datasets,
    model: Option<Arc<GmmModel>>,
    sample_cov: Option<CMat>,
    dictionary: Option<Dictionary>,
}

fn train_all(cfg: &ExperimentConfig, needs: &Needs, exec: Execution) -> Result<Trained> {
    let data = prepare_data(cfg, exec)?;
    let model = if needs.model {
        Some(Arc::new(fit_model(cfg, &data.train, exec)?))
    } else {
        None
    };
    let sample_cov = if needs.estimator(Estimator::Lmmse) {
        Some(sample_covariance(&data.train)?)
    } else {
        None
    };
    let dictionary = if needs.estimator(Estimator::Omp) {
        let [o_rx, o_h, o_v] = cfg.omp.oversampling;
        let s = &cfg.scenario;
        Some(Dictionary::new(s.nrx, s.ntx_h, s.ntx_v, (o_rx, o_h, o_v))?)
    } else {
        None
    };
    Ok(Trained {
        data,
        model,
        sample_cov,
        dictionary,
    })
}

/// Channel estimators for one noise level.
struct Estimation {
    obs: ObservationModel,
    adapted: Option<AdaptedGmm>,
    lmmse: Option<LmmseEstimator>,
    /// Dictionary and effective dictionary `A D`.
    omp: Option<(CMat, CMat)>,
    s_max: usize,
}

impl Estimation {
    fn new(cfg: &ExperimentConfig, trained: &Trained, needs: &Needs, sigma2: f64) -> Result<Self> {
        let s = &cfg.scenario;
        let obs = ObservationModel::new(s.ntx_h, s.ntx_v, s.nrx, cfg.n_p, RHO, sigma2)?;
        let adapted = match &trained.model {
            Some(m) if needs.observation => Some(adapt_to_observation(Arc::clone(m), &obs.operator, sigma2)?),
            _ => None,
        };
        let lmmse = match &trained.sample_cov {
            Some(c) => Some(LmmseEstimator::new(c, &obs.operator, sigma2)?),
            None => None,
        };
        let omp = trained
            .dictionary
            .as_ref()
            .map(|d| (d.matrix.clone(), &obs.operator * &d.matrix));
        let s_max = cfg.omp.max_sparsity.unwrap_or((obs.obs_dim() / 2).max(1));
        Ok(Estimation {
            obs,
            adapted,
            lmmse,
            omp,
            s_max,
        })
    }

    fn adapted(&self) -> Result<&AdaptedGmm> {
        self.adapted
            .as_ref()
            .ok_or_else(|| Error::Config("adapted GMM not trained".into()))
    }

    fn estimate(&self, e: Estimator, h: &CMat, y: &CVec) -> Result<CMat> {
        let (rows, cols) = h.shape();
        let v = match e {
            Estimator::Perfect => return Ok(h.clone()),
            Estimator::Gmm => estimate_gmm(self.adapted()?, y)?,
            Estimator::Lmmse => self
                .lmmse
                .as_ref()
                .ok_or_else(|| Error::Config("LMMSE estimator not trained".into()))?
                .estimate(y)?,
            Estimator::Omp => {
                let (d, phi) = self
                    .omp
                    .as_ref()
                    .ok_or_else(|| Error::Config("OMP dictionary not built".into()))?;
                estimate_omp_genie_with(d, phi, y, &vec_of(h), self.s_max)?.0
            }
        };
        Ok(unvec(&v, rows, cols))
    }
}

/// The true channel of one mobile, its pilot observation and the channel
/// estimates the selected methods need.
struct MobileCsi {
    h: CMat,
    y: CVec,
    estimates: [Option<CMat>; 4],
}

impl MobileCsi {
    fn new<R: rand::Rng + ?Sized>(h: &CMat, est: &Estimation, needs: &Needs, rng: &mut R) -> Result<Self> {
        let y = if needs.observation {
            est.obs.observe(h, rng)?
        } else {
            CVec::zeros(0)
        };
        let mut estimates: [Option<CMat>; 4] = Default::default();
        for e in Estimator::ALL {
            if needs.estimator(e) {
                estimates[e.slot()] = Some(est.estimate(e, h, &y)?);
            }
        }
        Ok(MobileCsi { h: h.clone(), y, estimates })
    }

    fn estimate(&self, e: Estimator) -> &CMat {
        self.estimates[e.slot()].as_ref().expect("estimate computed for every needed estimator")
    }
}

fn task_id(group: usize, index: usize) -> u64 {
    ((group as u64) << 32) | index as u64
}

/// Runs the experiment selected by `cfg.mode`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, Execution::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    match cfg.mode {
        Mode::P2p => run_p2p_experiment_with(cfg, exec),
        Mode::Mu => run_mu_experiment_with(cfg, exec),
    }
}

pub fn run_p2p_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_p2p_experiment_with(cfg, Execution::default())
}

/// Normalized spectral efficiency `r(H, Q) / C(H)` of every method on every
/// evaluation channel.
pub fn run_p2p_experiment_with(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    if cfg.mode != Mode::P2p {
        return Err(Error::validation("mode", "run_p2p_experiment needs mode = \"p2p\""));
    }
    cfg.validate()?;
    let methods = selected_methods(cfg)?;
    let needs = Needs::of(&methods);
    let trained = train_all(cfg, &needs, exec)?;
    let (nrx, ntx) = (cfg.scenario.nrx, cfg.scenario.ntx());
    let eval = &trained.data.eval.channels;
    let uniform = baseline_tx_strategy(BaselineKind::UniformCov, None, ntx, nrx, RHO)?;

    let mut records = Vec::new();
    for (si, &snr_db) in cfg.snr_db.iter().enumerate() {
        let sigma2 = sigma2_of(snr_db);
        let lloyd = if needs.lloyd {
            Some(lloyd_cov_codebook(cfg, &trained.data.train, sigma2, exec)?)
        } else {
            None
        };
        let lloyd_eval = lloyd.as_ref().map(CovCodebook::rate_evaluator);
        let gmm_cb = match &trained.model {
            Some(m) => Some(gmm_cov_codebook(m, &trained.data.train, sigma2, exec)?),
            None => None,
        };
        let est = Estimation::new(cfg, &trained, &needs, sigma2)?;

        let per_sample = map_range(exec, eval.len(), |i| -> Result<Vec<f64>> {
            let h = &eval[i];
            let mut rng = task_rng(cfg.seed, purpose::OBSERVATION, task_id(si, i));
            let csi = MobileCsi::new(h, &est, &needs, &mut rng)?;
            let (q_opt, _) = waterfilling_capacity(h, RHO, sigma2)?;
            let cap = rate(h, &q_opt, sigma2);
            let lloyd_q = |e: Estimator| -> Result<&CMat> {
                let ev: &RateEvaluator = lloyd_eval.as_ref().expect("Lloyd codebook trained");
                let k = select_by_rate_eval(csi.estimate(e), ev, sigma2)?.index;
                Ok(&lloyd.as_ref().expect("Lloyd codebook trained").entries[k])
            };
            methods
                .iter()
                .map(|&m| -> Result<f64> {
                    let achieved = match m {
                        Method::Optimal => rate(h, &q_opt, sigma2),
                        Method::UniPowCov => rate(h, &uniform, sigma2),
                        Method::UniPowEigsp => {
                            rate(h, &baseline_tx_strategy(BaselineKind::UniformEigsp, Some(h), ntx, nrx, RHO)?, sigma2)
                        }
                        Method::Lloyd(e) => rate(h, lloyd_q(e)?, sigma2),
                        Method::Gmm(c) => {
                            let cb = gmm_cb.as_ref().expect("GMM codebook trained");
                            let k = match c {
                                Csi::Perfect => select_by_responsibility_perfect(trained.model.as_ref().expect("model"), h)?,
                                Csi::Observation => select_by_responsibility(est.adapted()?, &csi.y)?,
                            }
                            .index;
                            rate(h, &cb.entries[k], sigma2)
                        }
                        other => {
                            return Err(Error::validation("methods", format!("{} is a multi-user method", other.label())))
                        }
                    };
                    Ok(achieved / cap)
                })
                .collect()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        for (mi, m) in methods.iter().enumerate() {
            let label = m.label();
            records.extend(per_sample.iter().enumerate().map(|(i, vals)| Record {
                method: label.clone(),
                snr_db,
                id: i,
                value: vals[mi],
            }));
        }
    }
    Ok(ExperimentResult {
        metric: Metric::Nse,
        records,
        traces: Vec::new(),
    })
}

pub fn run_mu_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_mu_experiment_with(cfg, Execution::default())
}

/// Codebooks used by the subspace-feedback methods.
struct MuCodebooks {
    lloyd: Option<DirCodebook>,
    gmm: Option<DirCodebook>,
    random: Option<DirCodebook>,
}

fn mu_codebooks(cfg: &ExperimentConfig, trained: &Trained, methods: &[Method], needs: &Needs, exec: Execution) -> Result<MuCodebooks> {
    let design = sigma2_of(cfg.codebook_design_snr_db);
    let nrx = cfg.scenario.nrx;
    let lloyd = if needs.lloyd {
        Some(extract_directions(&lloyd_cov_codebook(cfg, &trained.data.train, design, exec)?, nrx)?)
    } else {
        None
    };
    let gmm = match &trained.model {
        Some(m) if methods.iter().any(|x| matches!(x, Method::Gmm(_))) => {
            Some(extract_directions(&gmm_cov_codebook(m, &trained.data.train, design, exec)?, nrx)?)
        }
        _ => None,
    };
    let random = if needs.random { Some(random_codebook(cfg)?) } else { None };
    Ok(MuCodebooks { lloyd, gmm, random })
}

/// Result of one method on one constellation.
struct Outcome {
    sum_rate: f64,
    trace: Option<Vec<f64>>,
}

/// Sum-rate on the true channels for every constellation and method.
///
/// Each constellation draws `J` distinct mobiles from the evaluation set;
/// the draw depends only on the seed and the constellation index, so all
/// SNR points and methods see the same constellations.
pub fn run_mu_experiment_with(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResult> {
    if cfg.mode != Mode::Mu {
        return Err(Error::validation("mode", "run_mu_experiment needs mode = \"mu\""));
    }
    cfg.validate()?;
    let methods = selected_methods(cfg)?;
    let needs = Needs::of(&methods);
    let trained = train_all(cfg, &needs, exec)?;
    let books = mu_codebooks(cfg, &trained, &methods, &needs, exec)?;
    let eval = &trained.data.eval.channels;
    let n_users = cfg.users;
    let i_max = cfg.iterative.i_max;
    let iterative = matches!(cfg.precoder, PrecoderKind::Wmmse | PrecoderKind::Swmmse);

    let mut records = Vec::new();
    let mut wmmse_points = Vec::new();
    let mut swmmse_points = Vec::new();
    for (si, &snr_db) in cfg.snr_db.iter().enumerate() {
        let sigma2 = sigma2_of(snr_db);
        let est = Estimation::new(cfg, &trained, &needs, sigma2)?;

        let per_constellation = map_range(exec, cfg.num_constellations, |c| -> Result<Vec<Outcome>> {
            let mut pick = task_rng(cfg.seed, purpose::CONSTELLATION, c as u64);
            let users = sample_indices(&mut pick, eval.len(), n_users).into_vec();
            let mut noise = task_rng(cfg.seed, purpose::OBSERVATION, task_id(si, c));
            let mobiles = users
                .iter()
                .map(|&u| MobileCsi::new(&eval[u], &est, &needs, &mut noise))
                .collect::<Result<Vec<_>>>()?;
            let truth: Vec<CMat> = mobiles.iter().map(|m| m.h.clone()).collect();

            let subspaces = |cb: &Option<DirCodebook>, e: Estimator| -> Result<Vec<CMat>> {
                let cb = cb.as_ref().expect("codebook trained");
                mobiles
                    .iter()
                    .map(|m| {
                        let k = select_by_rate_subspace(m.estimate(e), cb, RHO, sigma2)?.index;
                        Ok(cb.entries[k].adjoint())
                    })
                    .collect()
            };
            let gmm_indices = |c: Csi| -> Result<Vec<usize>> {
                mobiles
                    .iter()
                    .map(|m| {
                        Ok(match c {
                            Csi::Perfect => select_by_responsibility_perfect(trained.model.as_ref().expect("model"), &m.h)?,
                            Csi::Observation => select_by_responsibility(est.adapted()?, &m.y)?,
                        }
                        .index)
                    })
                    .collect()
            };

            methods
                .iter()
                .enumerate()
                .map(|(mi, &m)| -> Result<Outcome> {
                    let h_tilde = match m {
                        Method::PerfectCsi => truth.clone(),
                        Method::Gmm(c) => {
                            let cb = books.gmm.as_ref().expect("GMM codebook trained");
                            gmm_indices(c)?.into_iter().map(|k| cb.entries[k].adjoint()).collect()
                        }
                        Method::Lloyd(e) => subspaces(&books.lloyd, e)?,
                        Method::Random(e) => subspaces(&books.random, e)?,
                        Method::GmmSamples(csi) => {
                            let k_stars = gmm_indices(csi)?;
                            let model = trained.model.as_ref().expect("model");
                            let opts = SwmmseOptions {
                                i_max,
                                ..SwmmseOptions::default()
                            };
                            let group = si * methods.len() + mi;
                            let mut rng = task_rng(cfg.seed, purpose::SWMMSE, task_id(group, c));
                            let mut trace = Vec::with_capacity(i_max);
                            let res = swmmse_monitored(model, &k_stars, RHO, sigma2, &opts, &mut rng, |_, ps| {
                                trace.push(sum_rate(&truth, ps, sigma2)?);
                                Ok(())
                            })?;
                            return Ok(Outcome {
                                sum_rate: sum_rate(&truth, &res.precoders, sigma2)?,
                                trace: Some(trace),
                            });
                        }
                        other => {
                            return Err(Error::validation("methods", format!("{} is a point-to-point method", other.label())))
                        }
                    };
                    precode(cfg, &h_tilde, &truth, sigma2)
                })
                .collect()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        for (mi, m) in methods.iter().enumerate() {
            let label = m.label();
            records.extend(per_constellation.iter().enumerate().map(|(c, o)| Record {
                method: label.clone(),
                snr_db,
                id: c,
                value: o[mi].sum_rate,
            }));
            let traces: Vec<&Vec<f64>> = per_constellation.iter().filter_map(|o| o[mi].trace.as_ref()).collect();
            if traces.is_empty() {
                continue;
            }
            let target = if matches!(m, Method::GmmSamples(_)) {
                &mut swmmse_points
            } else {
                &mut wmmse_points
            };
            target.extend(mean_trace(&traces, i_max).into_iter().enumerate().map(|(i, v)| TracePoint {
                method: label.clone(),
                snr_db,
                iteration: i + 1,
                sum_rate: v,
            }));
        }
    }

    let mut traces = Vec::new();
    if iterative && !wmmse_points.is_empty() {
        traces.push(Trace {
            precoder: "wmmse".into(),
            points: wmmse_points,
        });
    }
    if !swmmse_points.is_empty() {
        traces.push(Trace {
            precoder: "swmmse".into(),
            points: swmmse_points,
        });
    }
    Ok(ExperimentResult {
        metric: Metric::SumRate,
        records,
        traces,
    })
}

/// Precoders designed on the fed-back channels, evaluated on the true ones.
fn precode(cfg: &ExperimentConfig, h_tilde: &[CMat], truth: &[CMat], sigma2: f64) -> Result<Outcome> {
    let (ps, trace): (PrecoderSet, Option<Vec<f64>>) = match cfg.precoder {
        PrecoderKind::Rbd => (rbd(h_tilde, RHO, sigma2)?, None),
        PrecoderKind::Rci => (rci(h_tilde, RHO, sigma2)?, None),
        PrecoderKind::Wmmse | PrecoderKind::Swmmse => {
            let mut trace = Vec::with_capacity(cfg.iterative.i_max);
            let res = wmmse_monitored(
                h_tilde,
                RHO,
                sigma2,
                cfg.streams(),
                cfg.iterative.i_max,
                cfg.iterative.wmmse_tol,
                |_, ps| {
                    trace.push(sum_rate(truth, ps, sigma2)?);
                    Ok(())
                },
            )?;
            (res.precoders, Some(trace))
        }
    };
    Ok(Outcome {
        sum_rate: sum_rate(truth, &ps, sigma2)?,
        trace,
    })
}

/// Per-iteration mean over constellations. Runs that stopped early hold
/// their last value.
fn mean_trace(traces: &[&Vec<f64>], len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let total: f64 = traces
                .iter()
                .map(|t| t.get(i).or(t.last()).copied().unwrap_or(0.0))
                .sum();
            total / traces.len() as f64
        })
        .collect()
}
