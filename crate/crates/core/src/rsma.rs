//! One-layer rate-splitting signal model.
//!
//! Stream 0 of every precoder is the common stream; streams `1..=K` are the
//! private streams. Each user first decodes the common stream treating all
//! private streams as noise, removes it, then decodes its own private stream.

use crate::channel::ChannelSampleSet;
use crate::em_model::{Antenna, AntennaCoder};
use crate::error::{Error, Result};
use crate::linalg::{svd_sorted, CMatrix, C64, ZERO};

/// Slack allowed on the transmit power budget.
pub const POWER_SLACK: f64 = 1e-9;
/// Default number of points in the common/private power-split search.
pub const DEFAULT_SPLIT_GRID: usize = 101;
/// Relative singular-value threshold below which a stacked estimate is
/// treated as rank deficient.
pub const ZF_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessMode {
    /// Common stream plus private streams.
    Rsma,
    /// Private streams only; the common precoder is pinned to zero.
    Sdma,
}

/// `N x (K+1)` precoder, common column first.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderMatrix {
    m: CMatrix,
}

impl PrecoderMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.ncols() < 2 || m.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "precoder must be N x (K+1) with N, K >= 1, got {:?}",
                m.shape()
            )));
        }
        if !m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::InvalidArgument("precoder entries must be finite".into()));
        }
        Ok(Self { m })
    }

    pub fn zeros(n_tx: usize, n_users: usize) -> Self {
        Self {
            m: CMatrix::zeros(n_tx, n_users + 1),
        }
    }

    pub fn n_tx(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.m.ncols() - 1
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    /// Column `i` (0 = common, `k+1` = user `k`'s private stream).
    pub fn stream(&self, i: usize) -> &[C64] {
        let n = self.m.nrows();
        &self.m.as_slice()[i * n..(i + 1) * n]
    }

    pub fn stream_mut(&mut self, i: usize) -> &mut [C64] {
        let n = self.m.nrows();
        &mut self.m.as_mut_slice()[i * n..(i + 1) * n]
    }

    pub fn common(&self) -> &[C64] {
        self.stream(0)
    }

    pub fn private(&self, k: usize) -> &[C64] {
        self.stream(k + 1)
    }

    /// `||p_c||^2 + sum_k ||p_k||^2`.
    pub fn power(&self) -> f64 {
        self.m.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_feasible(&self, p_t: f64) -> bool {
        self.power() <= p_t + POWER_SLACK
    }

    pub fn has_zero_common(&self) -> bool {
        self.common().iter().all(|z| *z == ZERO)
    }
}

/// `|h p_i|^2` for every stream `i = 0..=K`, written into `out`.
#[inline]
pub fn stream_gains_into(h: &[C64], p: &PrecoderMatrix, out: &mut [f64]) {
    let n = p.n_tx();
    let data = p.matrix().as_slice();
    for (i, g) in out.iter_mut().enumerate() {
        let col = &data[i * n..(i + 1) * n];
        let mut acc = ZERO;
        for (hv, pv) in h.iter().zip(col) {
            acc += hv * pv;
        }
        *g = acc.norm_sqr();
    }
}

/// SINRs from precomputed stream gains (`gains[0]` is the common stream).
#[inline]
pub fn sinr_from_gains(gains: &[f64], k: usize, sigma2: f64) -> (f64, f64) {
    let privates: f64 = gains[1..].iter().sum();
    let gamma_c = gains[0] / (privates + sigma2);
    let own = gains[k + 1];
    let gamma_p = own / (privates - own + sigma2);
    (gamma_c, gamma_p)
}

/// Common and private SINR of user `k` (0-based) on channel row `h`.
pub fn sinr_pair(h: &[C64], p: &PrecoderMatrix, k: usize, sigma2: f64) -> (f64, f64) {
    let mut gains = vec![0.0; p.n_users() + 1];
    stream_gains_into(h, p, &mut gains);
    sinr_from_gains(&gains, k, sigma2)
}

/// Sample-average rates of all users and the resulting sum-rate objective.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// `R_c,k` per user (bits/s/Hz).
    pub common_per_user: Vec<f64>,
    /// `R_p,k` per user.
    pub private: Vec<f64>,
    /// `min_k R_c,k`.
    pub common: f64,
    /// `common + sum_k private[k]`.
    pub objective: f64,
}

impl RateReport {
    pub fn from_user_rates(common_per_user: Vec<f64>, private: Vec<f64>) -> Self {
        let common = common_per_user.iter().copied().fold(f64::INFINITY, f64::min);
        let common = if common.is_finite() { common } else { 0.0 };
        let objective = Self::assemble(common, &private);
        Self {
            common_per_user,
            private,
            common,
            objective,
        }
    }

    /// The sum-rate objective; summed in user order so it is reproducible.
    pub fn assemble(common: f64, private: &[f64]) -> f64 {
        private.iter().fold(common, |acc, r| acc + r)
    }

    pub fn zero(n_users: usize) -> Self {
        Self::from_user_rates(vec![0.0; n_users], vec![0.0; n_users])
    }
}

/// Per-sample coded channel rows `w_k^H H_e,k^(s)` for every user; `None`
/// marks a user whose coder radiates nothing (all its rates are zero).
#[derive(Debug, Clone)]
pub struct CodedSamples {
    /// `rows[k]` is `S x N`.
    pub rows: Vec<Option<CMatrix>>,
}

impl CodedSamples {
    pub fn num_users(&self) -> usize {
        self.rows.len()
    }
}

/// `S x N` matrix whose row `s` is `w^H H^(s)`.
pub fn code_user_samples(w: &[C64], realizations: &[CMatrix]) -> CMatrix {
    let n = realizations.first().map_or(0, |h| h.ncols());
    let mut out = CMatrix::zeros(realizations.len(), n);
    for (s, h) in realizations.iter().enumerate() {
        for col in 0..n {
            let mut acc = ZERO;
            for (i, wi) in w.iter().enumerate() {
                acc += wi.conj() * h[(i, col)];
            }
            out[(s, col)] = acc;
        }
    }
    out
}

pub fn code_samples(antenna: &Antenna, samples: &ChannelSampleSet, coders: &[AntennaCoder]) -> CodedSamples {
    let rows = samples
        .users
        .iter()
        .zip(coders)
        .map(|(u, b)| {
            antenna
                .pattern_coder(b)
                .map(|w| code_user_samples(w.as_slice(), &u.realizations))
        })
        .collect();
    CodedSamples { rows }
}

/// Coded estimate rows `w_k^H Ĥ_e,k`; zero rows for unusable coders.
pub fn code_estimates(antenna: &Antenna, samples: &ChannelSampleSet, coders: &[AntennaCoder]) -> Vec<Vec<C64>> {
    samples
        .users
        .iter()
        .zip(coders)
        .map(|(u, b)| match antenna.pattern_coder(b) {
            Some(w) => code_user_samples(w.as_slice(), std::slice::from_ref(&u.estimate))
                .row(0)
                .iter()
                .copied()
                .collect(),
            None => vec![ZERO; u.estimate.ncols()],
        })
        .collect()
}

/// Sample-average `(R_c,k, R_p,k)` of user `k` over the rows of `rows`.
pub fn user_rates(rows: &CMatrix, p: &PrecoderMatrix, k: usize, sigma2: f64) -> (f64, f64) {
    let n_samples = rows.nrows();
    if n_samples == 0 {
        return (0.0, 0.0);
    }
    let mut gains = vec![0.0; p.n_users() + 1];
    let mut h = vec![ZERO; rows.ncols()];
    let (mut rc, mut rp) = (0.0, 0.0);
    for s in 0..n_samples {
        for (j, v) in h.iter_mut().enumerate() {
            *v = rows[(s, j)];
        }
        stream_gains_into(&h, p, &mut gains);
        let (gc, gp) = sinr_from_gains(&gains, k, sigma2);
        rc += gc.ln_1p();
        rp += gp.ln_1p();
    }
    let scale = std::f64::consts::LOG2_E / n_samples as f64;
    (rc * scale, rp * scale)
}

pub fn rates_from_coded(coded: &CodedSamples, p: &PrecoderMatrix, sigma2: f64) -> RateReport {
    let (common, private) = coded
        .rows
        .iter()
        .enumerate()
        .map(|(k, rows)| match rows {
            Some(r) => user_rates(r, p, k, sigma2),
            None => (0.0, 0.0),
        })
        .unzip();
    RateReport::from_user_rates(common, private)
}

/// SAA rates of `samples` with every user's coder applied.
pub fn sample_average_rates(
    antenna: &Antenna,
    samples: &ChannelSampleSet,
    coders: &[AntennaCoder],
    p: &PrecoderMatrix,
    sigma2: f64,
) -> Result<RateReport> {
    if coders.len() != samples.num_users() {
        return Err(Error::dims("coders per user", samples.num_users(), coders.len()));
    }
    if p.n_users() != samples.num_users() {
        return Err(Error::dims("precoder private streams", samples.num_users(), p.n_users()));
    }
    Ok(rates_from_coded(&code_samples(antenna, samples, coders), p, sigma2))
}

/// Single-sample objective on the given rows, used by the split search.
fn single_sample_objective(rows: &[Vec<C64>], p: &PrecoderMatrix, sigma2: f64) -> f64 {
    let mut gains = vec![0.0; p.n_users() + 1];
    let mut common = f64::INFINITY;
    let mut private = Vec::with_capacity(rows.len());
    for (k, h) in rows.iter().enumerate() {
        stream_gains_into(h, p, &mut gains);
        let (gc, gp) = sinr_from_gains(&gains, k, sigma2);
        common = common.min(gc.ln_1p() * std::f64::consts::LOG2_E);
        private.push(gp.ln_1p() * std::f64::consts::LOG2_E);
    }
    RateReport::assemble(common, &private)
}

fn stack_rows(rows: &[Vec<C64>]) -> Result<CMatrix> {
    let k = rows.len();
    if k == 0 {
        return Err(Error::InvalidArgument("no channel rows".into()));
    }
    let n = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::dims("channel row length", n, bad.len()));
    }
    Ok(CMatrix::from_fn(k, n, |i, j| rows[i][j]))
}

/// Transmit-side beam directions of a stacked estimate: the dominant
/// `N`-dimensional singular direction and, when the stack has full row
/// rank, the unit-norm zero-forcing columns.
struct ZfGeometry {
    dominant: Vec<C64>,
    zf: Result<Vec<Vec<C64>>>,
}

fn zf_geometry(h: &CMatrix) -> ZfGeometry {
    let (k, n) = h.shape();
    let svd = svd_sorted(h);
    let largest = svd.s.first().copied().unwrap_or(0.0);
    let dominant: Vec<C64> = if largest > 0.0 {
        svd.v.column(0).iter().copied().collect()
    } else {
        let mut e0 = vec![ZERO; n];
        e0[0] = C64::new(1.0, 0.0);
        e0
    };
    let rank = svd.s.iter().filter(|&&s| largest > 0.0 && s > ZF_RANK_TOL * largest).count();
    let zf = if rank < k {
        Err(Error::RankDeficient { rank, users: k })
    } else {
        // pinv = V diag(1/s) U^H, one column per user.
        Ok((0..k)
            .map(|user| {
                let mut col: Vec<C64> = (0..n)
                    .map(|row| {
                        (0..k).fold(ZERO, |acc, j| acc + svd.v[(row, j)] * svd.u[(user, j)].conj() / svd.s[j])
                    })
                    .collect();
                let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                col.iter_mut().for_each(|z| *z /= norm);
                col
            })
            .collect())
    };
    ZfGeometry { dominant, zf }
}

fn assemble_split(dominant: &[C64], zf: &[Vec<C64>], p_t: f64, split: f64) -> PrecoderMatrix {
    let k = zf.len();
    let n = dominant.len();
    let mut p = PrecoderMatrix::zeros(n, k);
    let a = (split * p_t).sqrt();
    let b = ((1.0 - split) * p_t / k as f64).sqrt();
    for (dst, src) in p.stream_mut(0).iter_mut().zip(dominant) {
        *dst = src * a;
    }
    for (user, col) in zf.iter().enumerate() {
        for (dst, src) in p.stream_mut(user + 1).iter_mut().zip(col) {
            *dst = src * b;
        }
    }
    p
}

/// RS-ZF-SVD with a fixed common power fraction `split` in `[0, 1]`.
pub fn rs_zf_svd_with_split(rows: &[Vec<C64>], p_t: f64, split: f64) -> Result<PrecoderMatrix> {
    if !(0.0..=1.0).contains(&split) {
        return Err(Error::InvalidArgument(format!("power split {split} outside [0, 1]")));
    }
    let h = stack_rows(rows)?;
    let geo = zf_geometry(&h);
    let zf = geo.zf?;
    Ok(assemble_split(&geo.dominant, &zf, p_t, split))
}

/// RS-ZF-SVD: common stream on the dominant transmit singular direction,
/// unit-norm ZF privates with equal power, and a grid search over the
/// common power fraction that maximizes the one-sample sum rate on the
/// estimate rows. Returns the precoder and the chosen fraction.
pub fn rs_zf_svd_search(
    rows: &[Vec<C64>],
    p_t: f64,
    sigma2: f64,
    grid_points: usize,
) -> Result<(PrecoderMatrix, f64)> {
    if grid_points < 2 {
        return Err(Error::InvalidArgument("power-split grid needs at least 2 points".into()));
    }
    let h = stack_rows(rows)?;
    let geo = zf_geometry(&h);
    let zf = geo.zf?;
    let mut best: Option<(f64, f64, PrecoderMatrix)> = None;
    for g in 0..grid_points {
        let split = g as f64 / (grid_points - 1) as f64;
        let p = assemble_split(&geo.dominant, &zf, p_t, split);
        let obj = single_sample_objective(rows, &p, sigma2);
        if best.as_ref().is_none_or(|(b, _, _)| obj > *b) {
            best = Some((obj, split, p));
        }
    }
    let (_, split, p) = best.expect("grid is nonempty");
    Ok((p, split))
}

pub fn rs_zf_svd_precoder(rows: &[Vec<C64>], p_t: f64, sigma2: f64, grid_points: usize) -> Result<PrecoderMatrix> {
    rs_zf_svd_search(rows, p_t, sigma2, grid_points).map(|(p, _)| p)
}

/// RS-ZF-SVD that falls back to all power on the common stream when the
/// stacked estimate cannot be zero-forced.
pub fn rs_zf_svd_or_common(rows: &[Vec<C64>], p_t: f64, sigma2: f64, grid_points: usize) -> Result<PrecoderMatrix> {
    match rs_zf_svd_precoder(rows, p_t, sigma2, grid_points) {
        Err(Error::RankDeficient { .. }) => {
            let h = stack_rows(rows)?;
            let geo = zf_geometry(&h);
            let mut p = PrecoderMatrix::zeros(h.ncols(), h.nrows());
            let a = p_t.sqrt();
            for (dst, src) in p.stream_mut(0).iter_mut().zip(&geo.dominant) {
                *dst = src * a;
            }
            Ok(p)
        }
        other => other,
    }
}

/// Zero-forcing SDMA with equal power per private stream and no common stream.
pub fn sdma_zf_precoder(rows: &[Vec<C64>], p_t: f64) -> Result<PrecoderMatrix> {
    rs_zf_svd_with_split(rows, p_t, 0.0)
}

/// SDMA-ZF that falls back to equal-power matched filtering when the
/// estimate cannot be zero-forced. Users with a zero row get no power.
pub fn sdma_zf_or_mrt(rows: &[Vec<C64>], p_t: f64) -> Result<PrecoderMatrix> {
    match sdma_zf_precoder(rows, p_t) {
        Err(Error::RankDeficient { .. }) => {
            let h = stack_rows(rows)?;
            let (k, n) = h.shape();
            let mut p = PrecoderMatrix::zeros(n, k);
            let b = (p_t / k as f64).sqrt();
            for (user, row) in rows.iter().enumerate() {
                let norm = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for (dst, src) in p.stream_mut(user + 1).iter_mut().zip(row) {
                        *dst = src.conj() * (b / norm);
                    }
                }
            }
            Ok(p)
        }
        other => other,
    }
}

/// Closed-form precoder for `mode` on the estimate rows, with fallbacks.
pub fn baseline_precoder(mode: AccessMode, rows: &[Vec<C64>], p_t: f64, sigma2: f64, grid_points: usize) -> Result<PrecoderMatrix> {
    match mode {
        AccessMode::Rsma => rs_zf_svd_or_common(rows, p_t, sigma2, grid_points),
        AccessMode::Sdma => sdma_zf_or_mrt(rows, p_t),
    }
}
