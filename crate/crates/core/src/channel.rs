//! Synthetic geometric multipath MIMO channels.
//!
//! The base station has a uniform rectangular array (URA) with
//! `ntx_h × ntx_v` elements, the mobile a uniform linear array (ULA) with
//! `nrx` elements, both at half-wavelength spacing for the uplink carrier.
//! A downlink channel is
//!
//! ```text
//! H = Σ_ℓ g_ℓ · a_rx(θ_ℓ) a_tx(φ_ℓ, ψ_ℓ)ᴴ · exp(−2πj f τ_ℓ)
//! ```
//!
//! where the path angles scatter around a per-sample cluster direction.
//! Uplink channels reuse the geometry (angles, delays, path powers), are
//! evaluated at the uplink carrier with redrawn path phases, and are stored
//! in their physical orientation `N_tx × N_rx`.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, BlobReader, BlobWriter};
use crate::linalg::{complex_normal, energy, vec_of, CMat, CVec, C64};
use crate::par::{self, Execution};
use crate::rng::{purpose, task_rng};

fn default_carrier_hz() -> f64 {
    2.53e9
}
fn default_max_delay_s() -> f64 {
    1e-6
}
fn default_delay_spread_s() -> f64 {
    0.3e-6
}
fn default_sector_deg() -> f64 {
    120.0
}
fn default_clusters() -> [usize; 2] {
    [1, 1]
}
fn default_rx_spread_deg() -> f64 {
    40.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub ntx_h: usize,
    pub ntx_v: usize,
    pub nrx: usize,
    /// Inclusive `[min, max]` for the number of paths per sample.
    pub num_paths_range: [usize; 2],
    /// Inclusive `[min, max]` for the number of scattering clusters per
    /// sample. Paths are dealt round-robin to the clusters; the first
    /// cluster sets the sample's main direction.
    #[serde(default = "default_clusters")]
    pub num_clusters_range: [usize; 2],
    /// Standard deviation of the per-path base-station angles around the
    /// cluster center.
    pub angle_spread_deg: f64,
    /// Standard deviation of the per-path arrival angles at the mobile.
    #[serde(default = "default_rx_spread_deg")]
    pub rx_angle_spread_deg: f64,
    /// Relative gap between downlink and uplink carrier, `f_DL = f_UL (1 + offset)`.
    pub carrier_offset: f64,
    #[serde(with = "crate::io::u64_text")]
    pub rng_seed: u64,
    /// Uplink carrier; the arrays have half-wavelength spacing at this frequency.
    #[serde(default = "default_carrier_hz")]
    pub carrier_hz: f64,
    #[serde(default = "default_max_delay_s")]
    pub max_delay_s: f64,
    /// Decay constant of the exponential power-delay profile.
    #[serde(default = "default_delay_spread_s")]
    pub delay_spread_s: f64,
    /// Azimuth sector covered by the base station.
    #[serde(default = "default_sector_deg")]
    pub sector_deg: f64,
}

impl ScenarioConfig {
    pub fn new(ntx_h: usize, ntx_v: usize, nrx: usize) -> Self {
        ScenarioConfig {
            ntx_h,
            ntx_v,
            nrx,
            num_paths_range: [3, 8],
            num_clusters_range: default_clusters(),
            angle_spread_deg: 5.0,
            rx_angle_spread_deg: default_rx_spread_deg(),
            carrier_offset: 200e6 / 2.53e9,
            rng_seed: 0,
            carrier_hz: default_carrier_hz(),
            max_delay_s: default_max_delay_s(),
            delay_spread_s: default_delay_spread_s(),
            sector_deg: default_sector_deg(),
        }
    }

    pub fn ntx(&self) -> usize {
        self.ntx_h * self.ntx_v
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.ntx_h == 0 || self.ntx_v == 0 {
            return bad("transmit array dimensions must be at least 1");
        }
        if self.nrx == 0 {
            return bad("nrx must be at least 1");
        }
        let [lo, hi] = self.num_paths_range;
        if lo == 0 || hi < lo {
            return bad("num_paths_range must satisfy 1 <= min <= max");
        }
        let [lo, hi] = self.num_clusters_range;
        if lo == 0 || hi < lo {
            return bad("num_clusters_range must satisfy 1 <= min <= max");
        }
        if !(self.angle_spread_deg > 0.0) || !(self.rx_angle_spread_deg > 0.0) {
            return bad("angle spreads must be positive");
        }
        if !(self.carrier_hz > 0.0) || !(self.carrier_offset > -1.0) {
            return bad("carrier frequencies must be positive");
        }
        if !(self.max_delay_s >= 0.0) || !(self.delay_spread_s > 0.0) {
            return bad("delay parameters must be non-negative with positive spread");
        }
        Ok(())
    }

    pub fn uplink_hz(&self) -> f64 {
        self.carrier_hz
    }

    pub fn downlink_hz(&self) -> f64 {
        self.carrier_hz * (1.0 + self.carrier_offset)
    }
}

/// One propagation path. Angles in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationPath {
    pub gain: C64,
    pub delay_s: f64,
    pub azimuth_tx: f64,
    pub elevation_tx: f64,
    pub angle_rx: f64,
}

/// Path set of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub paths: Vec<PropagationPath>,
}

/// ULA response `a[k] = exp(jπ k u)` for direction cosine `u` (already scaled
/// by the frequency ratio).
pub fn ula_response(n: usize, u: f64) -> CVec {
    CVec::from_fn(n, |k, _| C64::from_polar(1.0, PI * k as f64 * u))
}

/// Base-station URA response: horizontal ULA ⊗ vertical ULA.
pub fn ura_response(ntx_h: usize, ntx_v: usize, azimuth: f64, elevation: f64, freq_ratio: f64) -> CVec {
    let a_h = ula_response(ntx_h, freq_ratio * azimuth.sin() * elevation.cos());
    let a_v = ula_response(ntx_v, freq_ratio * elevation.sin());
    a_h.kronecker(&a_v)
}

/// Downlink-orientation channel `N_rx × N_tx` for the given paths at `freq_hz`.
pub fn synthesize(cfg: &ScenarioConfig, geometry: &Geometry, freq_hz: f64) -> CMat {
    let ratio = freq_hz / cfg.carrier_hz;
    let mut h = CMat::zeros(cfg.nrx, cfg.ntx());
    for p in &geometry.paths {
        let a_rx = ula_response(cfg.nrx, ratio * p.angle_rx.sin());
        let a_tx = ura_response(cfg.ntx_h, cfg.ntx_v, p.azimuth_tx, p.elevation_tx, ratio);
        let phase = C64::from_polar(1.0, -2.0 * PI * freq_hz * p.delay_s);
        let coef = p.gain * phase;
        h += (&a_rx * a_tx.adjoint()) * coef;
    }
    h
}

fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// Draws the path set of one sample.
pub fn sample_geometry<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Geometry {
    let [lo, hi] = cfg.num_paths_range;
    let n_paths = rng.random_range(lo..=hi);
    let half_sector = cfg.sector_deg.to_radians() / 2.0;
    let el_range = (-20f64).to_radians()..=10f64.to_radians();
    let center_az = rng.random_range(-half_sector..=half_sector);
    let center_el = rng.random_range(el_range.clone());
    let center_rx = rng.random_range(-PI / 2.0..=PI / 2.0);
    let [c_lo, c_hi] = cfg.num_clusters_range;
    let n_clusters = if c_hi > c_lo { rng.random_range(c_lo..=c_hi) } else { c_lo };
    let mut centers = vec![(center_az, center_el, center_rx)];
    for _ in 1..n_clusters {
        centers.push((
            rng.random_range(-half_sector..=half_sector),
            rng.random_range(el_range.clone()),
            rng.random_range(-PI / 2.0..=PI / 2.0),
        ));
    }
    let spread = cfg.angle_spread_deg.to_radians();
    let rx_spread = cfg.rx_angle_spread_deg.to_radians();

    let mut delays: Vec<f64> = (0..n_paths)
        .map(|_| rng.random::<f64>() * cfg.max_delay_s)
        .collect();
    delays.sort_by(f64::total_cmp);
    let powers: Vec<f64> = delays
        .iter()
        .map(|t| (-t / cfg.delay_spread_s).exp())
        .collect();
    let total: f64 = powers.iter().sum();

    let paths = delays
        .iter()
        .zip(&powers)
        .enumerate()
        .map(|(i, (&delay_s, &p))| {
            let (c_az, c_el, c_rx) = centers[i % centers.len()];
            let z: [f64; 3] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            PropagationPath {
                gain: complex_normal(rng) * (p / total).sqrt(),
                delay_s,
                azimuth_tx: wrap_angle(c_az + spread * z[0]),
                elevation_tx: wrap_angle(c_el + spread * z[1]),
                angle_rx: wrap_angle(c_rx + rx_spread * z[2]),
            }
        })
        .collect();
    Geometry { paths }
}

/// Same geometry with each path phase redrawn, magnitudes kept.
fn redraw_phases<R: Rng + ?Sized>(geometry: &Geometry, rng: &mut R) -> Geometry {
    Geometry {
        paths: geometry
            .paths
            .iter()
            .map(|p| PropagationPath {
                gain: C64::from_polar(p.gain.norm(), rng.random::<f64>() * 2.0 * PI),
                ..*p
            })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "UL")]
    Uplink,
    #[serde(rename = "DL")]
    Downlink,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDataset {
    pub channels: Vec<CMat>,
    pub domain: Domain,
    /// Cumulative scale applied to the raw generator output.
    pub normalization_factor: f64,
    pub scenario: ScenarioConfig,
}

impl ChannelDataset {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// `(rows, cols)` of every matrix.
    pub fn dims(&self) -> (usize, usize) {
        self.channels
            .first()
            .map(|h| (h.nrows(), h.ncols()))
            .unwrap_or((0, 0))
    }

    pub fn vectors(&self) -> Vec<CVec> {
        self.channels.iter().map(vec_of).collect()
    }

    pub fn mean_energy(&self) -> f64 {
        self.channels.iter().map(energy).sum::<f64>() / self.len() as f64
    }

    /// Transposes every matrix. Used to turn uplink data into
    /// downlink-shaped training data.
    pub fn transposed(&self) -> ChannelDataset {
        ChannelDataset {
            channels: self.channels.iter().map(|h| h.transpose()).collect(),
            ..self.clone()
        }
    }

    fn check_uniform(&self) -> Result<()> {
        let dims = self.dims();
        if self.channels.iter().any(|h| (h.nrows(), h.ncols()) != dims) {
            return Err(Error::arg("dataset matrices differ in shape"));
        }
        Ok(())
    }
}

/// Generated pair of datasets plus the per-sample downlink geometry.
pub struct ScenarioDraw {
    pub uplink: ChannelDataset,
    pub downlink: ChannelDataset,
    pub uplink_geometry: Vec<Geometry>,
    pub downlink_geometry: Vec<Geometry>,
}

/// Draws `count` uplink/downlink channel pairs.
///
/// With `correlated_pair` the two domains share angles, delays and path
/// powers per sample; otherwise the downlink geometry is drawn independently.
pub fn generate_scenario(
    config: &ScenarioConfig,
    count: usize,
    correlated_pair: bool,
) -> Result<(ChannelDataset, ChannelDataset)> {
    let draw = generate_scenario_detailed(config, count, correlated_pair, Execution::default())?;
    Ok((draw.uplink, draw.downlink))
}

pub fn generate_scenario_detailed(
    config: &ScenarioConfig,
    count: usize,
    correlated_pair: bool,
    exec: Execution,
) -> Result<ScenarioDraw> {
    config.validate()?;
    if count == 0 {
        return Err(Error::arg("count must be at least 1"));
    }
    let seed = config.rng_seed;
    let samples = par::map_range(exec, count, |m| {
        let mut rng = task_rng(seed, purpose::GEOMETRY, m as u64);
        let ul_base = sample_geometry(config, &mut rng);
        let mut phase_rng = task_rng(seed, purpose::UPLINK_PHASE, m as u64);
        let dl_geo = if correlated_pair {
            ul_base.clone()
        } else {
            let mut rng = task_rng(seed, purpose::DOWNLINK_GEOMETRY, m as u64);
            sample_geometry(config, &mut rng)
        };
        let ul_geo = redraw_phases(&ul_base, &mut phase_rng);
        let dl = synthesize(config, &dl_geo, config.downlink_hz());
        let ul = synthesize(config, &ul_geo, config.uplink_hz()).transpose();
        (ul, dl, ul_geo, dl_geo)
    });

    let mut draw = ScenarioDraw {
        uplink: empty_dataset(config, Domain::Uplink, count),
        downlink: empty_dataset(config, Domain::Downlink, count),
        uplink_geometry: Vec::with_capacity(count),
        downlink_geometry: Vec::with_capacity(count),
    };
    for (ul, dl, ug, dg) in samples {
        draw.uplink.channels.push(ul);
        draw.downlink.channels.push(dl);
        draw.uplink_geometry.push(ug);
        draw.downlink_geometry.push(dg);
    }
    Ok(draw)
}

fn empty_dataset(config: &ScenarioConfig, domain: Domain, capacity: usize) -> ChannelDataset {
    ChannelDataset {
        channels: Vec::with_capacity(capacity),
        domain,
        normalization_factor: 1.0,
        scenario: config.clone(),
    }
}

/// Scales the set so that the mean of `‖vec(H)‖²` equals `rows · cols`.
pub fn normalize_dataset(mut ds: ChannelDataset) -> Result<ChannelDataset> {
    if ds.is_empty() {
        return Err(Error::arg("cannot normalize an empty dataset"));
    }
    ds.check_uniform()?;
    let (rows, cols) = ds.dims();
    let target = (rows * cols) as f64;
    let mean = ds.mean_energy();
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::Degenerate("dataset has zero (or non-finite) energy".into()));
    }
    let scale = (target / mean).sqrt();
    if (scale - 1.0).abs() > 1e-13 {
        for h in &mut ds.channels {
            *h *= C64::new(scale, 0.0);
        }
        ds.normalization_factor *= scale;
    }
    Ok(ds)
}

/// Order-preserving split into the first `train_count` samples and the rest.
pub fn split_dataset(mut ds: ChannelDataset, train_count: usize) -> Result<(ChannelDataset, ChannelDataset)> {
    if train_count == 0 || train_count >= ds.len() {
        return Err(Error::arg(format!(
            "train_count {train_count} must lie strictly between 0 and {}",
            ds.len()
        )));
    }
    let rest = ds.channels.split_off(train_count);
    let eval = ChannelDataset {
        channels: rest,
        ..ds.clone()
    };
    Ok((ds, eval))
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    rows: usize,
    cols: usize,
    count: usize,
    domain_tag: Domain,
    normalization_factor: f64,
    scenario: ScenarioConfig,
}

const DATASET_FORMAT: &str = "gmmfb-dataset";

/// Writes `path` (binary blob) and its `.toml` sidecar header.
pub fn write_dataset(ds: &ChannelDataset, path: &Path) -> Result<()> {
    ds.check_uniform()?;
    let (rows, cols) = ds.dims();
    let mut blob = BlobWriter::create(path)?;
    for h in &ds.channels {
        blob.matrix(h)?;
    }
    blob.finish()?;
    io::write_header(
        path,
        &DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: 1,
            rows,
            cols,
            count: ds.len(),
            domain_tag: ds.domain,
            normalization_factor: ds.normalization_factor,
            scenario: ds.scenario.clone(),
        },
    )
}

pub fn read_dataset(path: &Path) -> Result<ChannelDataset> {
    let header: DatasetHeader = io::read_header(path)?;
    if header.format != DATASET_FORMAT {
        return Err(Error::Format(format!("not a dataset header: {}", header.format)));
    }
    let mut blob = BlobReader::open(path)?;
    let channels = (0..header.count)
        .map(|_| blob.matrix(header.rows, header.cols))
        .collect::<Result<Vec<_>>>()?;
    blob.expect_end()?;
    Ok(ChannelDataset {
        channels,
        domain: header.domain_tag,
        normalization_factor: header.normalization_factor,
        scenario: header.scenario,
    })
}
