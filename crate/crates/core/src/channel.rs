//! Synthetic scenarios, imperfect-CSIT decomposition and SAA sample sets.
//!
//! Every random quantity is drawn from its own ChaCha substream keyed by
//! `(seed, tag, indices...)`, so results do not depend on the order in which
//! parallel workers touch realizations, users or samples.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::em_model::{ImpedanceNetwork, OpenCircuitPatterns, PatternBasis};
use crate::error::{Error, Result};
use crate::linalg::{cn_matrix, CMatrix, CVector, C64};

/// Substream tags; one per independent family of draws.
pub mod tag {
    pub const HARDWARE: u64 = 0x01;
    pub const TRUE_CHANNEL: u64 = 0x02;
    pub const ESTIMATE_SPLIT: u64 = 0x03;
    pub const SAA_SAMPLE: u64 = 0x04;
    pub const EVAL_SAMPLE: u64 = 0x05;
    pub const SEBO: u64 = 0x06;
    pub const TRAINING: u64 = 0x07;
    pub const ONLINE: u64 = 0x08;
    pub const CODEBOOK: u64 = 0x09;
    pub const VIRTUAL: u64 = 0x0a;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit seed for the stream addressed by `path` under `seed`, for
/// components that take a plain seed rather than a generator.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p.wrapping_mul(0xd605_bbb5_8c8a_bb3d)));
    }
    state
}

/// Independent generator for the stream addressed by `path` under `seed`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = derive_seed(seed, path);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Transmit antennas `N`.
    pub n_tx: usize,
    /// Users `K`.
    pub n_users: usize,
    /// RF switches per pixel antenna `Q`.
    pub n_switches: usize,
    /// Spatial samples `N_s`; the pattern matrix has `2 N_s` rows.
    pub n_spatial: usize,
    /// Total transmit power (linear).
    pub p_t: f64,
    /// Noise power (linear).
    pub sigma2: f64,
    /// CSIT quality factor.
    pub alpha: f64,
    /// Error-power constant: per-entry error variance is `beta * p_t^-alpha`.
    pub beta: f64,
    /// SAA samples `S` per channel estimate.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_tx: 2,
            n_users: 2,
            n_switches: 11,
            n_spatial: 4,
            p_t: 100.0,
            sigma2: 1.0,
            alpha: 0.5,
            beta: 1.0,
            n_samples: 20,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("N", self.n_tx),
            ("K", self.n_users),
            ("Q", self.n_switches),
            ("Ns", self.n_spatial),
            ("S", self.n_samples),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if !(self.p_t > 0.0 && self.p_t.is_finite()) {
            return Err(Error::config("snr_db", "transmit power must be positive and finite"));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::config("sigma2", "noise power must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", "must lie in [0, 1]"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", "must be non-negative"));
        }
        Ok(())
    }

    /// Sets `p_t = sigma2 * 10^(snr_db / 10)`.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.p_t = self.sigma2 * 10f64.powf(snr_db / 10.0);
        self
    }

    pub fn snr(&self) -> f64 {
        self.p_t / self.sigma2
    }

    /// Per-entry CSIT error variance `beta * p_t^-alpha`.
    pub fn error_variance(&self) -> f64 {
        self.beta * self.p_t.powf(-self.alpha)
    }
}

/// Draws a random passive pixel-antenna network and its open-circuit
/// patterns. `Z_PP` is exactly symmetric; if `Re(Z)` has a negative
/// eigenvalue its diagonal is shifted by `|lambda_min| + 0.1`.
pub fn synth_pixel_hardware<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> (ImpedanceNetwork, OpenCircuitPatterns) {
    let q = cfg.n_switches;
    let mut gauss = || -> f64 { rng.sample(StandardNormal) };
    let a = DMatrix::<f64>::from_fn(q, q, |_, _| gauss());
    let b = DMatrix::<f64>::from_fn(q, q, |_, _| gauss());
    let z_pa = CVector::from_fn(q, |_, _| C64::new(gauss(), gauss()));
    let z_aa = C64::new(gauss(), gauss());

    let mut full = CMatrix::zeros(q + 1, q + 1);
    full[(0, 0)] = z_aa;
    for i in 0..q {
        full[(0, i + 1)] = z_pa[i];
        full[(i + 1, 0)] = z_pa[i];
        for j in 0..q {
            full[(i + 1, j + 1)] = C64::new(0.5 * (a[(i, j)] + a[(j, i)]), 0.5 * (b[(i, j)] + b[(j, i)]));
        }
    }
    let lambda_min = full.map(|z| z.re).symmetric_eigen().eigenvalues.min();
    if lambda_min < 0.0 {
        let shift = lambda_min.abs() + 0.1;
        for i in 0..=q {
            full[(i, i)].re += shift;
        }
    }
    let network = ImpedanceNetwork::from_full(&full).expect("synthesized network is well formed");
    let e_oc = cn_matrix(rng, 2 * cfg.n_spatial, q + 1, 1.0);
    let patterns = OpenCircuitPatterns::new(e_oc).expect("synthesized patterns are well formed");
    (network, patterns)
}

/// Full beamspace description of one scenario: a virtual channel per user and
/// the transmit pattern matrix. Only used to cross-check the effective model.
#[derive(Debug, Clone)]
pub struct VirtualScenario {
    pub h_v: Vec<CMatrix>,
    pub e_t: CMatrix,
}

pub fn synth_virtual_scenario<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> VirtualScenario {
    let dim = 2 * cfg.n_spatial;
    let h_v = (0..cfg.n_users).map(|_| cn_matrix(rng, dim, dim, 1.0)).collect();
    let mut e_t = cn_matrix(rng, dim, cfg.n_tx, 1.0);
    for mut col in e_t.column_iter_mut() {
        let n = col.norm();
        col.unscale_mut(n);
    }
    VirtualScenario { h_v, e_t }
}

/// `H_e,k = U^T H_v,k E_T` for every user.
pub fn derive_effective_channel(scen: &VirtualScenario, basis: &PatternBasis) -> Result<Vec<CMatrix>> {
    let u_t = basis.u().transpose();
    scen.h_v
        .iter()
        .map(|h| {
            if h.nrows() != u_t.ncols() {
                return Err(Error::dims("virtual channel rows", u_t.ncols(), h.nrows()));
            }
            if h.ncols() != scen.e_t.nrows() {
                return Err(Error::dims("transmit pattern rows", h.ncols(), scen.e_t.nrows()));
            }
            Ok(&u_t * h * &scen.e_t)
        })
        .collect()
}

/// Unit-variance i.i.d. effective channels (`r x N` per user) for one
/// Monte-Carlo realization.
pub fn draw_true_channels(cfg: &ScenarioConfig, rank: usize, realization: u64) -> Vec<CMatrix> {
    (0..cfg.n_users)
        .map(|k| {
            let mut rng = substream(cfg.seed, &[tag::TRUE_CHANNEL, realization, k as u64]);
            cn_matrix(&mut rng, rank, cfg.n_tx, 1.0)
        })
        .collect()
}

/// One user's estimate and its error-perturbed realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSamples {
    pub estimate: CMatrix,
    pub errors: Vec<CMatrix>,
    pub realizations: Vec<CMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSampleSet {
    pub users: Vec<UserSamples>,
}

impl ChannelSampleSet {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_samples(&self) -> usize {
        self.users.first().map_or(0, |u| u.realizations.len())
    }

    pub fn estimates(&self) -> Vec<CMatrix> {
        self.users.iter().map(|u| u.estimate.clone()).collect()
    }
}

/// Draws `count` conditional samples `estimate + error` around each user's
/// estimate; sample `s` of user `k` comes from stream `(tag, realization, k, s)`.
pub fn conditional_samples(
    seed: u64,
    stream_tag: u64,
    realization: u64,
    estimates: &[CMatrix],
    error_variance: f64,
    count: usize,
) -> ChannelSampleSet {
    let users = estimates
        .iter()
        .enumerate()
        .map(|(k, est)| {
            let errors: Vec<CMatrix> = (0..count)
                .map(|s| {
                    let mut rng = substream(seed, &[stream_tag, realization, k as u64, s as u64]);
                    cn_matrix(&mut rng, est.nrows(), est.ncols(), error_variance)
                })
                .collect();
            let realizations = errors.iter().map(|e| est + e).collect();
            UserSamples {
                estimate: est.clone(),
                errors,
                realizations,
            }
        })
        .collect();
    ChannelSampleSet { users }
}

/// Splits each true channel into `estimate = truth - error_0` and draws
/// `cfg.n_samples` SAA realizations around the estimate.
pub fn draw_sample_set(cfg: &ScenarioConfig, h_true: &[CMatrix], realization: u64) -> ChannelSampleSet {
    let var = cfg.error_variance();
    let estimates: Vec<CMatrix> = h_true
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let mut rng = substream(cfg.seed, &[tag::ESTIMATE_SPLIT, realization, k as u64]);
            h - cn_matrix(&mut rng, h.nrows(), h.ncols(), var)
        })
        .collect();
    conditional_samples(cfg.seed, tag::SAA_SAMPLE, realization, &estimates, var, cfg.n_samples)
}
