//! Experiment configuration, read from TOML.
//!
//! ```toml
//! mode = "mu"              # "p2p" or "mu"
//! seed = 7
//! snr_db = [5.0]
//! n_p = 8
//! bits = 6                 # K = 2^bits
//! users = 4                # J
//! precoder = "rbd"         # rbd | rci | wmmse | swmmse
//! num_constellations = 500
//!
//! [scenario]
//! ntx_h = 4
//! ntx_v = 4
//! nrx = 4
//! num_paths_range = [3, 8]
//! angle_spread_deg = 5.0
//! carrier_offset = 0.079
//! rng_seed = 1
//! ```
//!
//! Sections `[data]`, `[gmm]`, `[lloyd]`, `[omp]` and `[iterative]` are
//! optional; see the field defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ScenarioConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    P2p,
    Mu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecoderKind {
    #[default]
    Rbd,
    Rci,
    Wmmse,
    /// GMM-sample methods run stochastic WMMSE; subspace-feedback methods
    /// run WMMSE on the fed-back subspaces.
    Swmmse,
}

impl PrecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            PrecoderKind::Rbd => "rbd",
            PrecoderKind::Rci => "rci",
            PrecoderKind::Wmmse => "wmmse",
            PrecoderKind::Swmmse => "swmmse",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GmmStructure {
    Full,
    #[default]
    Kronecker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Uplink training samples.
    pub train: usize,
    /// Downlink evaluation samples.
    pub eval: usize,
    pub correlated_pair: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: 20_000,
            eval: 10_000,
            correlated_pair: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub structure: GmmStructure,
    /// Kronecker split of `K`; `None` picks `k_rx = 2^round(bits/3)`.
    pub k_tx: Option<usize>,
    pub k_rx: Option<usize>,
    pub max_iter: usize,
    pub tol: f64,
    pub zero_mean: bool,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            structure: GmmStructure::Kronecker,
            k_tx: None,
            k_rx: None,
            max_iter: 100,
            tol: 1e-5,
            zero_mean: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LloydConfig {
    pub max_outer: usize,
    pub pga_iters: usize,
}

impl Default for LloydConfig {
    fn default() -> Self {
        LloydConfig {
            max_outer: 30,
            pga_iters: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmpConfig {
    /// Grid oversampling `(rx, tx_h, tx_v)`.
    pub oversampling: [usize; 3],
    /// Largest sparsity tried by the genie; `None` means half the
    /// observation length.
    pub max_sparsity: Option<usize>,
}

impl Default for OmpConfig {
    fn default() -> Self {
        OmpConfig {
            oversampling: [2, 2, 2],
            max_sparsity: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterativeConfig {
    pub i_max: usize,
    /// Relative sum-rate change that stops WMMSE early.
    pub wmmse_tol: f64,
}

impl Default for IterativeConfig {
    fn default() -> Self {
        IterativeConfig {
            i_max: 300,
            wmmse_tol: 1e-6,
        }
    }
}

fn default_constellations() -> usize {
    2500
}
fn default_design_snr() -> f64 {
    25.0
}
fn default_users() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(with = "crate::io::u64_text")]
    pub seed: u64,
    pub snr_db: Vec<f64>,
    pub n_p: usize,
    pub bits: u32,
    #[serde(default = "default_users")]
    pub users: usize,
    #[serde(default)]
    pub precoder: PrecoderKind,
    /// WMMSE streams per user for subspace feedback (default 1). SWMMSE
    /// always uses `N_rx`.
    #[serde(default)]
    pub streams: Option<usize>,
    #[serde(default = "default_constellations")]
    pub num_constellations: usize,
    /// SNR at which the multi-user directional codebooks are designed.
    #[serde(default = "default_design_snr")]
    pub codebook_design_snr_db: f64,
    /// Method labels to evaluate; empty means every method of the mode.
    #[serde(default)]
    pub methods: Vec<String>,
    /// Allows `J·N_rx ≠ N_tx` in multi-user mode.
    #[serde(default)]
    pub allow_any_geometry: bool,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub gmm: GmmConfig,
    #[serde(default)]
    pub lloyd: LloydConfig,
    #[serde(default)]
    pub omp: OmpConfig,
    #[serde(default)]
    pub iterative: IterativeConfig,
}

fn invalid<T>(field: &str, reason: impl Into<String>) -> Result<T> {
    Err(Error::validation(field, reason))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Codebook size `K = 2^B`.
    pub fn k(&self) -> usize {
        1usize << self.bits
    }

    /// `(K_tx, K_rx)` of the Kronecker model.
    pub fn kronecker_split(&self) -> (usize, usize) {
        let k = self.k();
        match (self.gmm.k_tx, self.gmm.k_rx) {
            (Some(t), Some(r)) => (t, r),
            (Some(t), None) => (t, k / t.max(1)),
            (None, Some(r)) => (k / r.max(1), r),
            (None, None) => {
                let r = 1usize << ((self.bits as f64 / 3.0).round() as u32);
                (k / r, r)
            }
        }
    }

    /// WMMSE stream count for subspace feedback.
    pub fn streams(&self) -> usize {
        self.streams.unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario
            .validate()
            .map_err(|e| Error::validation("scenario", e.to_string()))?;
        let ntx = self.scenario.ntx();
        let nrx = self.scenario.nrx;
        if self.snr_db.is_empty() {
            return invalid("snr_db", "at least one SNR is required");
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return invalid("snr_db", "values must be finite");
        }
        if !self.codebook_design_snr_db.is_finite() {
            return invalid("codebook_design_snr_db", "must be finite");
        }
        if self.n_p == 0 || self.n_p > ntx {
            return invalid("n_p", format!("must lie in 1..={ntx}"));
        }
        if self.bits == 0 || self.bits > 16 {
            return invalid("bits", "must lie in 1..=16");
        }
        let k = self.k();
        if self.data.train < k {
            return invalid("data.train", format!("needs at least K = {k} samples"));
        }
        if self.data.eval == 0 {
            return invalid("data.eval", "must be positive");
        }
        if self.gmm.structure == GmmStructure::Kronecker {
            let (t, r) = self.kronecker_split();
            if t == 0 || r == 0 || t * r != k {
                return invalid("gmm.k_tx", format!("K_tx·K_rx = {t}·{r} must equal K = {k}"));
            }
        }
        if self.gmm.max_iter == 0 {
            return invalid("gmm.max_iter", "must be positive");
        }
        if !(self.gmm.tol >= 0.0) {
            return invalid("gmm.tol", "must be non-negative");
        }
        if self.lloyd.max_outer == 0 || self.lloyd.pga_iters == 0 {
            return invalid("lloyd", "iteration caps must be positive");
        }
        if self.omp.oversampling.contains(&0) {
            return invalid("omp.oversampling", "factors must be positive");
        }
        let obs_dim = nrx * self.n_p;
        if let Some(s) = self.omp.max_sparsity {
            if s == 0 || s > obs_dim {
                return invalid("omp.max_sparsity", format!("must lie in 1..={obs_dim}"));
            }
        }
        if self.iterative.i_max == 0 {
            return invalid("iterative.i_max", "must be positive");
        }
        if self.mode == Mode::Mu {
            if self.users == 0 {
                return invalid("users", "must be positive");
            }
            if self.users > self.data.eval {
                return invalid("users", "more users than evaluation samples");
            }
            if !self.allow_any_geometry && self.users * nrx != ntx {
                return invalid(
                    "users",
                    format!("J·N_rx = {} must equal N_tx = {ntx} (set allow_any_geometry to override)", self.users * nrx),
                );
            }
            if matches!(self.precoder, PrecoderKind::Rbd | PrecoderKind::Rci) && self.users < 2 {
                return invalid("precoder", "rbd and rci need at least two users");
            }
            if nrx > ntx {
                return invalid("scenario.nrx", "subspace feedback needs N_rx <= N_tx");
            }
            if self.num_constellations == 0 {
                return invalid("num_constellations", "must be positive");
            }
            let d = self.streams();
            if d == 0 || d > nrx {
                return invalid("streams", format!("must lie in 1..={nrx}"));
            }
        }
        for label in &self.methods {
            super::Method::parse(self.mode, label)?;
        }
        Ok(())
    }
}
