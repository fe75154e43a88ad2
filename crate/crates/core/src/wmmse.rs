//! Alternating sum-rate maximization over precoder and antenna coders.
//!
//! The precoder block uses the weighted-MMSE reformulation: for a fixed
//! precoder the optimal receive equalizers and MSE weights are closed form,
//! and for fixed equalizers/weights the precoder problem is a convex
//! quadratically constrained program. The coder block runs SEBO on one user
//! at a time.
//!
//! Augmented MSEs are reported in bits (`u eps - log2 u`, so that at the
//! optimal weights they equal one minus the rate). The precoder step itself
//! is posed with natural-log constants (`u eps - ln u`): with `u = 1/eps`
//! that is the exact minimizer in `u`, which is what makes every
//! equalizer/weight/precoder round a monotone ascent on the sum rate.

use std::f64::consts::LOG2_E;

use crate::channel::{derive_seed, ChannelSampleSet};
use crate::em_model::{Antenna, AntennaCoder};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, quad_form, CMatrix, C64, ZERO};
use crate::rsma::{
    baseline_precoder, code_estimates, code_samples, code_user_samples, rates_from_coded, sinr_from_gains, user_rates,
    AccessMode, CodedSamples, PrecoderMatrix, RateReport,
};
use crate::sebo::{sebo_search, SeboConfig};

/// Equalizers, weights and MSEs of one user, one entry per SAA sample.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMmse {
    pub g_c: Vec<C64>,
    pub g_p: Vec<C64>,
    pub u_c: Vec<f64>,
    pub u_p: Vec<f64>,
    pub eps_c: Vec<f64>,
    pub eps_p: Vec<f64>,
}

impl UserMmse {
    fn silent(n_samples: usize) -> Self {
        Self {
            g_c: vec![ZERO; n_samples],
            g_p: vec![ZERO; n_samples],
            u_c: vec![1.0; n_samples],
            u_p: vec![1.0; n_samples],
            eps_c: vec![1.0; n_samples],
            eps_p: vec![1.0; n_samples],
        }
    }

    pub fn num_samples(&self) -> usize {
        self.g_c.len()
    }

    /// Sample-averaged augmented MSEs `(xi_c, xi_p)` in bits.
    pub fn augmented_mse(&self) -> (f64, f64) {
        let avg = |u: &[f64], e: &[f64]| {
            let s = u.len().max(1) as f64;
            u.iter().zip(e).map(|(u, e)| u * e - u.log2()).sum::<f64>() / s
        };
        (avg(&self.u_c, &self.eps_c), avg(&self.u_p, &self.eps_p))
    }
}

/// MMSE-optimal receivers for a fixed precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct WmmseState {
    pub users: Vec<UserMmse>,
}

impl WmmseState {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn augmented_mse(&self, k: usize) -> (f64, f64) {
        self.users[k].augmented_mse()
    }
}

/// `h p_i` for every stream.
fn stream_products(h: &[C64], p: &PrecoderMatrix, out: &mut [C64]) {
    for (i, z) in out.iter_mut().enumerate() {
        *z = h.iter().zip(p.stream(i)).fold(ZERO, |acc, (a, b)| acc + a * b);
    }
}

/// Optimal equalizers and weights for every user and sample under `p`.
///
/// The common-stream receiver sees every stream plus noise; the private
/// receiver works after the common stream has been cancelled. Weights are
/// the inverse MSEs.
pub fn mmse_update(coded: &CodedSamples, p: &PrecoderMatrix, sigma2: f64) -> WmmseState {
    let n_samples = coded.rows.iter().flatten().map(|r| r.nrows()).max().unwrap_or(1);
    let n_streams = p.n_users() + 1;
    let users = coded
        .rows
        .iter()
        .enumerate()
        .map(|(k, rows)| {
            let Some(rows) = rows else {
                return UserMmse::silent(n_samples);
            };
            let s_count = rows.nrows();
            let mut out = UserMmse::silent(s_count);
            let mut h = vec![ZERO; rows.ncols()];
            let mut hp = vec![ZERO; n_streams];
            for s in 0..s_count {
                for (j, v) in h.iter_mut().enumerate() {
                    *v = rows[(s, j)];
                }
                stream_products(&h, p, &mut hp);
                let privates: f64 = hp[1..].iter().map(|z| z.norm_sqr()).sum();
                let interference: f64 = hp[1..]
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, z)| z.norm_sqr())
                    .sum::<f64>()
                    + sigma2;
                let t_p = privates + sigma2;
                let t_c = t_p + hp[0].norm_sqr();
                out.g_c[s] = hp[0].conj() / t_c;
                out.eps_c[s] = t_p / t_c;
                out.u_c[s] = t_c / t_p;
                out.g_p[s] = hp[k + 1].conj() / t_p;
                out.eps_p[s] = interference / t_p;
                out.u_p[s] = t_p / interference;
            }
            out
        })
        .collect();
    WmmseState { users }
}

/// MSE of a linear receiver `g` on a stream with gain `hp` and total
/// received power `total` (signal plus interference plus noise).
pub fn stream_mse(g: C64, hp: C64, total: f64) -> f64 {
    g.norm_sqr() * total - 2.0 * (g * hp).re + 1.0
}

/// Stopping rule for the precoder subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemConfig {
    /// Relative duality gap accepted as optimal.
    pub gap_tol: f64,
    pub max_iters: usize,
}

impl Default for SubproblemConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-10,
            max_iters: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub precoder: PrecoderMatrix,
    /// Weighted-MSE objective (natural-log constants) at the incoming precoder.
    pub initial_objective: f64,
    pub objective: f64,
    /// Certified bound on `objective - optimum`.
    pub gap: f64,
    pub iterations: usize,
    /// Multiplier of the power constraint at the returned point.
    pub power_multiplier: f64,
}

/// Per-user quadratic pieces of the weighted-MSE objective:
/// common `alpha_k(P) = sum_i p_i^H Phi_c p_i - 2 Re(f_c^H p_0) + c_c` and
/// private `beta_k(P) = sum_{j>=1} p_j^H Phi_p p_j - 2 Re(f_p^H p_k) + c_p`.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    mode: AccessMode,
    n_tx: usize,
    phi_c: Vec<CMatrix>,
    f_c: Vec<Vec<C64>>,
    c_c: Vec<f64>,
    phi_p: Vec<CMatrix>,
    f_p: Vec<Vec<C64>>,
    c_p: Vec<f64>,
}

impl QuadraticModel {
    pub fn new(coded: &CodedSamples, state: &WmmseState, n_tx: usize, sigma2: f64, mode: AccessMode) -> Self {
        let k_users = coded.num_users();
        let mut m = Self {
            mode,
            n_tx,
            phi_c: vec![CMatrix::zeros(n_tx, n_tx); k_users],
            f_c: vec![vec![ZERO; n_tx]; k_users],
            c_c: vec![1.0; k_users],
            phi_p: vec![CMatrix::zeros(n_tx, n_tx); k_users],
            f_p: vec![vec![ZERO; n_tx]; k_users],
            c_p: vec![1.0; k_users],
        };
        for (k, rows) in coded.rows.iter().enumerate() {
            let Some(rows) = rows else { continue };
            let st = &state.users[k];
            let s_count = rows.nrows();
            let scale = 1.0 / s_count as f64;
            let (mut cc, mut cp) = (0.0, 0.0);
            for s in 0..s_count {
                let wc = st.u_c[s] * st.g_c[s].norm_sqr();
                let wp = st.u_p[s] * st.g_p[s].norm_sqr();
                let fc = st.g_c[s].conj() * st.u_c[s];
                let fp = st.g_p[s].conj() * st.u_p[s];
                for a in 0..n_tx {
                    let ha = rows[(s, a)].conj();
                    m.f_c[k][a] += fc * ha * scale;
                    m.f_p[k][a] += fp * ha * scale;
                    for b in 0..n_tx {
                        let outer = ha * rows[(s, b)];
                        m.phi_c[k][(a, b)] += outer * (wc * scale);
                        m.phi_p[k][(a, b)] += outer * (wp * scale);
                    }
                }
                cc += st.u_c[s] * (st.g_c[s].norm_sqr() * sigma2 + 1.0) - st.u_c[s].ln();
                cp += st.u_p[s] * (st.g_p[s].norm_sqr() * sigma2 + 1.0) - st.u_p[s].ln();
            }
            m.c_c[k] = cc * scale;
            m.c_p[k] = cp * scale;
        }
        m
    }

    pub fn num_users(&self) -> usize {
        self.c_c.len()
    }

    /// Common-stream terms `alpha_k(P)`.
    pub fn common_terms(&self, p: &PrecoderMatrix) -> Vec<f64> {
        (0..self.num_users())
            .map(|k| {
                let quad: f64 = (0..=self.num_users()).map(|i| quad_form(&self.phi_c[k], p.stream(i))).sum();
                quad - 2.0 * dotc_re(&self.f_c[k], p.common()) + self.c_c[k]
            })
            .collect()
    }

    /// Sum of the private-stream terms.
    pub fn private_total(&self, p: &PrecoderMatrix) -> f64 {
        (0..self.num_users())
            .map(|k| {
                let quad: f64 = (1..=self.num_users()).map(|j| quad_form(&self.phi_p[k], p.stream(j))).sum();
                quad - 2.0 * dotc_re(&self.f_p[k], p.private(k)) + self.c_p[k]
            })
            .sum()
    }

    /// `max_k alpha_k + sum_k beta_k`, or just the private part without a
    /// common stream.
    pub fn objective(&self, p: &PrecoderMatrix) -> f64 {
        let private = self.private_total(p);
        match self.mode {
            AccessMode::Sdma => private,
            AccessMode::Rsma => self.common_terms(p).into_iter().fold(f64::NEG_INFINITY, f64::max) + private,
        }
    }

    /// Minimizer of the `lambda`-weighted Lagrangian over the power ball,
    /// its Lagrangian value and the power multiplier.
    fn best_response(&self, lambda: &[f64], p_t: f64) -> (PrecoderMatrix, f64, f64) {
        let k_users = self.num_users();
        let n = self.n_tx;
        let mut psi_c = CMatrix::zeros(n, n);
        let mut b0 = vec![ZERO; n];
        if self.mode == AccessMode::Rsma {
            for k in 0..k_users {
                psi_c += &self.phi_c[k] * C64::new(lambda[k], 0.0);
                for (dst, src) in b0.iter_mut().zip(&self.f_c[k]) {
                    *dst += src * lambda[k];
                }
            }
        }
        let mut psi_p = psi_c.clone();
        for phi in &self.phi_p {
            psi_p += phi;
        }

        let (dc, qc) = hermitian_eigen(&psi_c);
        let (dp, qp) = hermitian_eigen(&psi_p);
        let dc: Vec<f64> = dc.into_iter().map(|d| d.max(0.0)).collect();
        let dp: Vec<f64> = dp.into_iter().map(|d| d.max(0.0)).collect();
        let project = |q: &CMatrix, b: &[C64]| -> Vec<C64> {
            (0..n)
                .map(|col| (0..n).fold(ZERO, |acc, row| acc + q[(row, col)].conj() * b[row]))
                .collect()
        };
        // Column 0 uses the common spectrum, the private columns the other.
        let mut coeffs: Vec<(bool, Vec<C64>)> = Vec::with_capacity(k_users + 1);
        if self.mode == AccessMode::Rsma {
            coeffs.push((true, project(&qc, &b0)));
        }
        for f in &self.f_p {
            coeffs.push((false, project(&qp, f)));
        }

        let d_max = dc.iter().chain(&dp).fold(0.0f64, |a, &b| a.max(b));
        let d_tol = 1e-12 * d_max;
        let c_total: f64 = coeffs.iter().flat_map(|(_, c)| c.iter()).map(|z| z.norm_sqr()).sum();
        let c_tol = 1e-24 * c_total;
        let power = |mu: f64| -> f64 {
            let mut acc = 0.0;
            for (common, c) in &coeffs {
                let d = if *common { &dc } else { &dp };
                for (di, ci) in d.iter().zip(c) {
                    let m = ci.norm_sqr();
                    if *di <= d_tol && m <= c_tol {
                        continue;
                    }
                    let denom = if *di <= d_tol { mu } else { di + mu };
                    acc += m / (denom * denom);
                }
            }
            acc
        };

        let mu = if power(0.0) <= p_t {
            0.0
        } else {
            let mut lo = 0.0;
            let mut hi = (c_total / p_t).sqrt();
            while power(hi) > p_t {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if power(mid) > p_t {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        };

        let mut p = PrecoderMatrix::zeros(n, k_users);
        for (idx, (common, c)) in coeffs.iter().enumerate() {
            let stream = if self.mode == AccessMode::Rsma { idx } else { idx + 1 };
            let (d, q) = if *common { (&dc, &qc) } else { (&dp, &qp) };
            let col = p.stream_mut(stream);
            for (j, (di, ci)) in d.iter().zip(c).enumerate() {
                if *di <= d_tol && (ci.norm_sqr() <= c_tol || mu == 0.0) {
                    continue;
                }
                let denom = if *di <= d_tol { mu } else { di + mu };
                let coef = ci / denom;
                for (row, v) in col.iter_mut().enumerate() {
                    *v += q[(row, j)] * coef;
                }
            }
        }
        let pw = p.power();
        if pw > p_t {
            let s = (p_t / pw).sqrt();
            for i in 0..=k_users {
                p.stream_mut(i).iter_mut().for_each(|z| *z *= s);
            }
        }
        let value = self.lagrangian(&p, lambda);
        (p, value, mu)
    }

    fn lagrangian(&self, p: &PrecoderMatrix, lambda: &[f64]) -> f64 {
        let private = self.private_total(p);
        match self.mode {
            AccessMode::Sdma => private,
            AccessMode::Rsma => {
                let alphas = self.common_terms(p);
                alphas.iter().zip(lambda).map(|(a, l)| a * l).sum::<f64>() + private
            }
        }
    }
}

fn dotc_re(f: &[C64], p: &[C64]) -> f64 {
    f.iter().zip(p).map(|(a, b)| (a.conj() * b).re).sum()
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Solves the convex precoder subproblem for fixed equalizers and weights.
///
/// The per-user maximum over common-stream MSEs is handled through its dual:
/// for simplex weights `lambda` the Lagrangian separates over precoder
/// columns and is minimized in closed form over the power ball, and the
/// concave dual is maximized by projected gradient ascent with backtracking.
/// Every dual iterate yields a feasible primal candidate; the best one is
/// returned once the duality gap falls below `cfg.gap_tol`.
///
/// The result never has a larger objective than `p_in`. If no candidate
/// improves on `p_in` and the gap does not certify `p_in` as optimal, the
/// call fails with [`Error::SolverStall`].
pub fn precoder_subproblem_solve(
    coded: &CodedSamples,
    state: &WmmseState,
    p_in: &PrecoderMatrix,
    p_t: f64,
    sigma2: f64,
    mode: AccessMode,
    cfg: &SubproblemConfig,
) -> Result<SubproblemSolution> {
    if state.num_users() != coded.num_users() || p_in.n_users() != coded.num_users() {
        return Err(Error::dims("users in subproblem", coded.num_users(), p_in.n_users()));
    }
    let model = QuadraticModel::new(coded, state, p_in.n_tx(), sigma2, mode);
    let f_in = model.objective(p_in);
    let k_users = model.num_users();

    let mut lambda = vec![1.0 / k_users as f64; k_users];
    let (mut p_cur, mut d_cur, mut mu_cur) = model.best_response(&lambda, p_t);
    let mut best_p = p_cur.clone();
    let mut best_f = model.objective(&best_p);
    let mut best_mu = mu_cur;
    let mut best_dual = d_cur;
    let mut eta = 1.0;
    let mut iterations = 0;

    let single = mode == AccessMode::Sdma || k_users == 1;
    while !single && iterations < cfg.max_iters {
        if best_f - best_dual <= cfg.gap_tol * best_f.abs().max(1.0) {
            break;
        }
        iterations += 1;
        let grad = model.common_terms(&p_cur);
        let mut moved = false;
        while eta > 1e-18 {
            let stepped: Vec<f64> = lambda.iter().zip(&grad).map(|(l, g)| l + eta * g).collect();
            let trial = project_simplex(&stepped);
            let delta: Vec<f64> = trial.iter().zip(&lambda).map(|(a, b)| a - b).collect();
            let dist2: f64 = delta.iter().map(|x| x * x).sum();
            if dist2 == 0.0 {
                break;
            }
            let (p_t_trial, d_trial, mu_trial) = model.best_response(&trial, p_t);
            let linear: f64 = grad.iter().zip(&delta).map(|(g, d)| g * d).sum();
            let slack = 1e-14 * d_cur.abs().max(1.0);
            if d_trial >= d_cur + linear - dist2 / (2.0 * eta) - slack {
                lambda = trial;
                p_cur = p_t_trial;
                d_cur = d_trial;
                mu_cur = mu_trial;
                eta *= 2.0;
                moved = true;
                break;
            }
            eta *= 0.5;
        }
        if !moved {
            break;
        }
        let f_cur = model.objective(&p_cur);
        if f_cur < best_f {
            best_f = f_cur;
            best_p = p_cur.clone();
            best_mu = mu_cur;
        }
        best_dual = best_dual.max(d_cur);
    }

    if best_f <= f_in {
        Ok(SubproblemSolution {
            precoder: best_p,
            initial_objective: f_in,
            objective: best_f,
            gap: (best_f - best_dual).max(0.0),
            iterations,
            power_multiplier: best_mu,
        })
    } else if f_in - best_dual <= cfg.gap_tol * f_in.abs().max(1.0) {
        Ok(SubproblemSolution {
            precoder: p_in.clone(),
            initial_objective: f_in,
            objective: f_in,
            gap: (f_in - best_dual).max(0.0),
            iterations,
            power_multiplier: best_mu,
        })
    } else {
        Err(Error::SolverStall { iterations })
    }
}

/// The single-user coder objective: user `k`'s common rate (capped by the
/// other users' fixed common rates) plus its private rate. Other users'
/// rates do not depend on user `k`'s coder.
pub struct CoderObjective<'a> {
    antenna: &'a Antenna,
    k: usize,
    sigma2: f64,
    n_streams: usize,
    other_common: f64,
    /// `H_k^(s) P`, one `r x (K+1)` block per sample.
    received: Vec<CMatrix>,
}

impl<'a> CoderObjective<'a> {
    pub fn new(
        antenna: &'a Antenna,
        samples: &ChannelSampleSet,
        coders: &[AntennaCoder],
        p: &PrecoderMatrix,
        k: usize,
        sigma2: f64,
    ) -> Result<Self> {
        if coders.len() != samples.num_users() || k >= coders.len() {
            return Err(Error::dims("coders per user", samples.num_users(), coders.len()));
        }
        let mut other_common = f64::INFINITY;
        for (j, (user, b)) in samples.users.iter().zip(coders).enumerate() {
            if j == k {
                continue;
            }
            let rc = match antenna.pattern_coder(b) {
                Some(w) => user_rates(&code_user_samples(w.as_slice(), &user.realizations), p, j, sigma2).0,
                None => 0.0,
            };
            other_common = other_common.min(rc);
        }
        let received = samples.users[k].realizations.iter().map(|h| h * p.matrix()).collect();
        Ok(Self {
            antenna,
            k,
            sigma2,
            n_streams: p.n_users() + 1,
            other_common,
            received,
        })
    }

    pub fn eval(&self, b: &AntennaCoder) -> f64 {
        let Some(w) = self.antenna.pattern_coder(b) else {
            return 0.0;
        };
        let w = w.as_slice();
        let mut gains = vec![0.0; self.n_streams];
        let (mut rc, mut rp) = (0.0, 0.0);
        for m in &self.received {
            for (i, g) in gains.iter_mut().enumerate() {
                let z = w.iter().enumerate().fold(ZERO, |acc, (row, wi)| acc + wi.conj() * m[(row, i)]);
                *g = z.norm_sqr();
            }
            let (gc, gp) = sinr_from_gains(&gains, self.k, self.sigma2);
            rc += gc.ln_1p();
            rp += gp.ln_1p();
        }
        let scale = LOG2_E / self.received.len().max(1) as f64;
        (rc * scale).min(self.other_common) + rp * scale
    }
}

/// SEBO over user `k`'s coder with everything else fixed.
pub fn antenna_coder_update(
    antenna: &Antenna,
    samples: &ChannelSampleSet,
    coders: &[AntennaCoder],
    p: &PrecoderMatrix,
    k: usize,
    sigma2: f64,
    cfg: &SeboConfig,
) -> Result<AntennaCoder> {
    let objective = CoderObjective::new(antenna, samples, coders, p, k, sigma2)?;
    Ok(sebo_search(|b| objective.eval(b), antenna.num_switches(), cfg, &coders[k]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterLoopConfig {
    /// Stop when an outer iteration improves the objective by less than this
    /// relative amount.
    pub rel_tol: f64,
    pub max_outer_iters: usize,
    /// Relative tolerance of the inner WMMSE precoder loop.
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    pub subproblem: SubproblemConfig,
}

impl Default for OuterLoopConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            max_outer_iters: 50,
            inner_tol: 1e-5,
            inner_max_iters: 200,
            subproblem: SubproblemConfig::default(),
        }
    }
}

impl OuterLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::config("outer_tol", "must be positive"));
        }
        if !(self.inner_tol > 0.0) {
            return Err(Error::config("inner_tol", "must be positive"));
        }
        Ok(())
    }
}

/// What the alternating optimizer works on.
#[derive(Debug, Clone, Copy)]
pub struct OptimizationProblem<'a> {
    pub antenna: &'a Antenna,
    pub samples: &'a ChannelSampleSet,
    pub p_t: f64,
    pub sigma2: f64,
    pub mode: AccessMode,
}

#[derive(Debug, Clone)]
pub struct OptimizationOutcome {
    pub precoder: PrecoderMatrix,
    pub coders: Vec<AntennaCoder>,
    pub report: RateReport,
    /// Objective at the initial point and after every outer iteration.
    pub trace: Vec<f64>,
    /// Objective after every accepted precoder or coder update.
    pub steps: Vec<f64>,
    pub outer_iterations: usize,
    /// Precoder subproblems that returned without an improving point.
    pub stalls: usize,
}

/// Closed-form starting point: all-zeros coders and the baseline precoder
/// of `mode` on the coded estimates.
pub fn default_initial_point(
    problem: &OptimizationProblem,
    grid_points: usize,
) -> Result<(PrecoderMatrix, Vec<AntennaCoder>)> {
    let coders = vec![AntennaCoder::zeros(problem.antenna.num_switches()); problem.samples.num_users()];
    let rows = code_estimates(problem.antenna, problem.samples, &coders);
    let p = baseline_precoder(problem.mode, &rows, problem.p_t, problem.sigma2, grid_points)?;
    Ok((p, coders))
}

struct Tracker {
    report: RateReport,
    steps: Vec<f64>,
    stalls: usize,
}

/// Runs WMMSE rounds on the precoder with the coders fixed until the
/// relative improvement drops below `cfg.inner_tol`.
fn refine_precoder(
    problem: &OptimizationProblem,
    coded: &CodedSamples,
    p: &mut PrecoderMatrix,
    cfg: &OuterLoopConfig,
    tracker: &mut Tracker,
) -> Result<()> {
    for _ in 0..cfg.inner_max_iters {
        let state = mmse_update(coded, p, problem.sigma2);
        let sol = match precoder_subproblem_solve(coded, &state, p, problem.p_t, problem.sigma2, problem.mode, &cfg.subproblem) {
            Ok(sol) => sol,
            Err(Error::SolverStall { iterations }) => {
                log::warn!("precoder subproblem stalled after {iterations} dual iterations");
                tracker.stalls += 1;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let report = rates_from_coded(coded, &sol.precoder, problem.sigma2);
        let prev = tracker.report.objective;
        if report.objective < prev {
            return Ok(());
        }
        *p = sol.precoder;
        tracker.report = report;
        tracker.steps.push(tracker.report.objective);
        if tracker.report.objective - prev <= cfg.inner_tol * prev.abs().max(1e-12) {
            return Ok(());
        }
    }
    Ok(())
}

/// Alternates WMMSE precoder refinement and per-user SEBO coder updates.
///
/// Every accepted update is checked against the exact sample-average
/// objective, so the recorded traces never decrease. In SDMA mode the common
/// precoder is pinned to zero throughout.
pub fn alternating_optimize(
    problem: &OptimizationProblem,
    cfg: &OuterLoopConfig,
    sebo: &SeboConfig,
    init_p: &PrecoderMatrix,
    init_b: &[AntennaCoder],
) -> Result<OptimizationOutcome> {
    cfg.validate()?;
    let k_users = problem.samples.num_users();
    let q = problem.antenna.num_switches();
    if init_b.len() != k_users {
        return Err(Error::dims("initial coders", k_users, init_b.len()));
    }
    if let Some(b) = init_b.iter().find(|b| b.len() != q) {
        return Err(Error::dims("coder length", q, b.len()));
    }
    if init_p.n_users() != k_users {
        return Err(Error::dims("precoder private streams", k_users, init_p.n_users()));
    }
    if !init_p.is_feasible(problem.p_t) {
        return Err(Error::InvalidArgument("initial precoder exceeds the power budget".into()));
    }

    let mut p = init_p.clone();
    if problem.mode == AccessMode::Sdma {
        p.stream_mut(0).iter_mut().for_each(|z| *z = ZERO);
    }
    let mut coders = init_b.to_vec();
    let mut coded = code_samples(problem.antenna, problem.samples, &coders);
    let mut tracker = Tracker {
        report: rates_from_coded(&coded, &p, problem.sigma2),
        steps: Vec::new(),
        stalls: 0,
    };
    let mut trace = vec![tracker.report.objective];
    let mut outer_iterations = 0;

    for it in 0..cfg.max_outer_iters {
        outer_iterations += 1;
        let before = tracker.report.objective;
        refine_precoder(problem, &coded, &mut p, cfg, &mut tracker)?;

        for k in 0..k_users {
            let seeded = sebo.reseeded(derive_seed(sebo.seed, &[it as u64, k as u64]));
            let candidate = antenna_coder_update(problem.antenna, problem.samples, &coders, &p, k, problem.sigma2, &seeded)?;
            if candidate == coders[k] {
                continue;
            }
            let old_rows = coded.rows[k].take();
            coded.rows[k] = problem
                .antenna
                .pattern_coder(&candidate)
                .map(|w| code_user_samples(w.as_slice(), &problem.samples.users[k].realizations));
            let report = rates_from_coded(&coded, &p, problem.sigma2);
            if report.objective >= tracker.report.objective {
                coders[k] = candidate;
                tracker.report = report;
                tracker.steps.push(tracker.report.objective);
            } else {
                coded.rows[k] = old_rows;
            }
        }

        let after = tracker.report.objective;
        trace.push(after);
        if after - before < cfg.rel_tol * before.abs().max(1e-12) {
            break;
        }
    }

    Ok(OptimizationOutcome {
        precoder: p,
        coders,
        report: tracker.report,
        trace,
        steps: tracker.steps,
        outer_iterations,
        stalls: tracker.stalls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_sample_set, draw_true_channels, synth_pixel_hardware, tag, substream, ScenarioConfig};
    use crate::em_model::DEFAULT_RANK_TOL;
    use crate::linalg::cn_matrix;
    use crate::rsma::DEFAULT_SPLIT_GRID;
    use crate::sebo::brute_force_best;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn coded_from(rows: Vec<CMatrix>) -> CodedSamples {
        CodedSamples {
            rows: rows.into_iter().map(Some).collect(),
        }
    }

    fn random_precoder(rng: &mut ChaCha8Rng, n: usize, k: usize, p_t: f64) -> PrecoderMatrix {
        let m = cn_matrix(rng, n, k + 1, 1.0);
        let pw: f64 = m.iter().map(|z| z.norm_sqr()).sum();
        PrecoderMatrix::new(m * C64::new((p_t / pw).sqrt(), 0.0)).unwrap()
    }

    #[test]
    fn scalar_mmse_matches_hand_values() {
        // h p_c = 1, zero private streams, sigma2 = 1.
        let rows = coded_from(vec![CMatrix::from_element(1, 1, C64::new(1.0, 0.0))]);
        let p = PrecoderMatrix::new(CMatrix::from_row_slice(1, 2, &[C64::new(1.0, 0.0), ZERO])).unwrap();
        let st = mmse_update(&rows, &p, 1.0);
        let u = &st.users[0];
        assert!((u.eps_c[0] - 0.5).abs() < 1e-15);
        assert!((u.u_c[0] - 2.0).abs() < 1e-15);
        let (xi_c, _) = u.augmented_mse();
        assert!(xi_c.abs() < 1e-15);
        let (rc, _) = user_rates(rows.rows[0].as_ref().unwrap(), &p, 0, 1.0);
        assert!((xi_c - (1.0 - rc)).abs() < 1e-15);
    }

    #[test]
    fn zero_precoder_gives_unit_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = coded_from(vec![cn_matrix(&mut rng, 3, 2, 1.0), cn_matrix(&mut rng, 3, 2, 1.0)]);
        let st = mmse_update(&rows, &PrecoderMatrix::zeros(2, 2), 1.0);
        for u in &st.users {
            assert!(u.eps_c.iter().chain(&u.eps_p).all(|&e| e == 1.0));
            assert!(u.u_c.iter().chain(&u.u_p).all(|&w| w == 1.0));
            assert_eq!(u.augmented_mse(), (1.0, 1.0));
        }
    }

    #[test]
    fn rate_mse_identity_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let rows = coded_from((0..2).map(|_| cn_matrix(&mut rng, 5, 2, 1.0)).collect());
            let p = random_precoder(&mut rng, 2, 2, 100.0);
            let st = mmse_update(&rows, &p, 1.0);
            for k in 0..2 {
                let (rc, rp) = user_rates(rows.rows[k].as_ref().unwrap(), &p, k, 1.0);
                let (xc, xp) = st.augmented_mse(k);
                assert!((xc - (1.0 - rc)).abs() <= 1e-9);
                assert!((xp - (1.0 - rp)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn closed_form_equalizer_attains_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = coded_from(vec![cn_matrix(&mut rng, 1, 2, 1.0), cn_matrix(&mut rng, 1, 2, 1.0)]);
        let p = random_precoder(&mut rng, 2, 2, 10.0);
        let st = mmse_update(&rows, &p, 1.0);
        let h: Vec<C64> = rows.rows[1].as_ref().unwrap().row(0).iter().copied().collect();
        let mut hp = vec![ZERO; 3];
        stream_products(&h, &p, &mut hp);
        let t_p: f64 = hp[1..].iter().map(|z| z.norm_sqr()).sum::<f64>() + 1.0;
        let t_c = t_p + hp[0].norm_sqr();
        let u = &st.users[1];
        assert!((stream_mse(u.g_c[0], hp[0], t_c) - u.eps_c[0]).abs() < 1e-12);
        assert!((stream_mse(u.g_p[0], hp[2], t_p) - u.eps_p[0]).abs() < 1e-12);
        // Any other receiver does worse.
        assert!(stream_mse(u.g_c[0] * 1.1, hp[0], t_c) > u.eps_c[0]);
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.3, -0.2, 0.4]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn scalar_subproblem_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let rows = coded_from(vec![cn_matrix(&mut rng, 1, 1, 1.0)]);
            let p_t = 10.0;
            let p0 = random_precoder(&mut rng, 1, 1, p_t);
            let st = mmse_update(&rows, &p0, 1.0);
            let sol =
                precoder_subproblem_solve(&rows, &st, &p0, p_t, 1.0, AccessMode::Rsma, &SubproblemConfig::default()).unwrap();
            let model = QuadraticModel::new(&rows, &st, 1, 1.0, AccessMode::Rsma);
            // Optimal phases align each stream with its linear term, so a
            // grid over magnitudes on the power disk is exhaustive.
            let phase_c = model.f_c[0][0] / model.f_c[0][0].norm().max(1e-300);
            let phase_p = model.f_p[0][0] / model.f_p[0][0].norm().max(1e-300);
            let mut best = f64::INFINITY;
            let steps = 1000;
            for i in 0..=steps {
                for j in 0..=steps {
                    let a = p_t.sqrt() * i as f64 / steps as f64;
                    let b = p_t.sqrt() * j as f64 / steps as f64;
                    if a * a + b * b > p_t {
                        continue;
                    }
                    let cand = PrecoderMatrix::new(CMatrix::from_row_slice(1, 2, &[phase_c * a, phase_p * b])).unwrap();
                    best = best.min(model.objective(&cand));
                }
            }
            assert!(sol.objective <= best + 1e-9, "{} vs {}", sol.objective, best);
            assert!(sol.objective >= best - 1e-3, "{} vs {}", sol.objective, best);
        }
    }

    #[test]
    fn subproblem_is_monotone_and_certified() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let rows = coded_from((0..2).map(|_| cn_matrix(&mut rng, 4, 2, 1.0)).collect());
            let p0 = random_precoder(&mut rng, 2, 2, 100.0);
            let st = mmse_update(&rows, &p0, 1.0);
            let sol =
                precoder_subproblem_solve(&rows, &st, &p0, 100.0, 1.0, AccessMode::Rsma, &SubproblemConfig::default()).unwrap();
            assert!(sol.objective <= sol.initial_objective + 1e-12);
            assert!(sol.precoder.is_feasible(100.0));
            assert!(sol.gap <= 1e-6, "gap {}", sol.gap);
        }
    }

    #[test]
    fn warm_start_at_optimum_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rows = coded_from((0..2).map(|_| cn_matrix(&mut rng, 4, 2, 1.0)).collect());
        let p0 = random_precoder(&mut rng, 2, 2, 100.0);
        let st = mmse_update(&rows, &p0, 1.0);
        let cfg = SubproblemConfig::default();
        let first = precoder_subproblem_solve(&rows, &st, &p0, 100.0, 1.0, AccessMode::Rsma, &cfg).unwrap();
        let second = precoder_subproblem_solve(&rows, &st, &first.precoder, 100.0, 1.0, AccessMode::Rsma, &cfg).unwrap();
        assert!((second.objective - first.objective).abs() <= 1e-8);
    }

    #[test]
    fn power_budget_is_tight_when_multiplier_is_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut active = 0;
        for _ in 0..20 {
            let rows = coded_from((0..2).map(|_| cn_matrix(&mut rng, 6, 2, 1.0)).collect());
            let p0 = random_precoder(&mut rng, 2, 2, 100.0);
            let st = mmse_update(&rows, &p0, 1.0);
            let sol =
                precoder_subproblem_solve(&rows, &st, &p0, 100.0, 1.0, AccessMode::Rsma, &SubproblemConfig::default()).unwrap();
            if sol.power_multiplier > 0.0 {
                active += 1;
                assert!((sol.precoder.power() - 100.0).abs() <= 1e-6, "{}", sol.precoder.power());
            }
        }
        assert!(active > 0);
    }

    #[test]
    fn sdma_subproblem_keeps_common_stream_off() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = coded_from((0..2).map(|_| cn_matrix(&mut rng, 4, 2, 1.0)).collect());
        let mut p0 = random_precoder(&mut rng, 2, 2, 50.0);
        p0.stream_mut(0).iter_mut().for_each(|z| *z = ZERO);
        let st = mmse_update(&rows, &p0, 1.0);
        let sol = precoder_subproblem_solve(&rows, &st, &p0, 50.0, 1.0, AccessMode::Sdma, &SubproblemConfig::default()).unwrap();
        assert!(sol.precoder.has_zero_common());
        assert!(sol.objective <= sol.initial_objective);
    }

    fn small_problem(seed: u64, q: usize, k: usize) -> (Antenna, ChannelSampleSet, ScenarioConfig) {
        let cfg = ScenarioConfig {
            n_users: k,
            n_switches: q,
            n_samples: 8,
            seed,
            ..ScenarioConfig::default()
        };
        let mut rng = substream(seed, &[tag::HARDWARE]);
        let (net, pats) = synth_pixel_hardware(&cfg, &mut rng);
        let antenna = Antenna::new(net, pats, DEFAULT_RANK_TOL).unwrap().with_coder_table();
        let truth = draw_true_channels(&cfg, antenna.rank(), 0);
        let samples = draw_sample_set(&cfg, &truth, 0);
        (antenna, samples, cfg)
    }

    #[test]
    fn coder_update_matches_brute_force_on_small_antenna() {
        let (antenna, samples, cfg) = small_problem(4, 8, 2);
        let problem = OptimizationProblem {
            antenna: &antenna,
            samples: &samples,
            p_t: cfg.p_t,
            sigma2: cfg.sigma2,
            mode: AccessMode::Rsma,
        };
        let (p, coders) = default_initial_point(&problem, DEFAULT_SPLIT_GRID).unwrap();
        let sebo = SeboConfig { block: 8, iterations: 1, flips_per_kick: 0, restarts: 1, seed: 0 };
        for k in 0..2 {
            let obj = CoderObjective::new(&antenna, &samples, &coders, &p, k, cfg.sigma2).unwrap();
            let (want, fv) = brute_force_best(|b| obj.eval(b), 8);
            let got = antenna_coder_update(&antenna, &samples, &coders, &p, k, cfg.sigma2, &sebo).unwrap();
            assert_eq!(obj.eval(&got), fv);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn single_user_coder_objective_is_total_rate() {
        let (antenna, samples, cfg) = small_problem(6, 6, 1);
        let coders = vec![AntennaCoder::from_key(5, 6)];
        let rows = code_estimates(&antenna, &samples, &coders);
        let p = baseline_precoder(AccessMode::Rsma, &rows, cfg.p_t, cfg.sigma2, 11).unwrap();
        let obj = CoderObjective::new(&antenna, &samples, &coders, &p, 0, cfg.sigma2).unwrap();
        let report = crate::rsma::sample_average_rates(&antenna, &samples, &coders, &p, cfg.sigma2).unwrap();
        assert!((obj.eval(&coders[0]) - report.objective).abs() < 1e-12);
    }

    #[test]
    fn alternating_loop_is_monotone_and_respects_budget() {
        let (antenna, samples, cfg) = small_problem(9, 8, 2);
        let problem = OptimizationProblem {
            antenna: &antenna,
            samples: &samples,
            p_t: cfg.p_t,
            sigma2: cfg.sigma2,
            mode: AccessMode::Rsma,
        };
        let (p0, b0) = default_initial_point(&problem, DEFAULT_SPLIT_GRID).unwrap();
        let out = alternating_optimize(&problem, &OuterLoopConfig::default(), &SeboConfig::default(), &p0, &b0).unwrap();
        assert!(out.trace.windows(2).all(|w| w[1] >= w[0] - 1e-8), "{:?}", out.trace);
        assert!(out.steps.windows(2).all(|w| w[1] >= w[0] - 1e-8));
        assert!(out.precoder.is_feasible(cfg.p_t));
        assert!(out.report.objective >= out.trace[0]);
    }

    #[test]
    fn zero_outer_iterations_returns_initial_point() {
        let (antenna, samples, cfg) = small_problem(2, 6, 2);
        let problem = OptimizationProblem {
            antenna: &antenna,
            samples: &samples,
            p_t: cfg.p_t,
            sigma2: cfg.sigma2,
            mode: AccessMode::Rsma,
        };
        let (p0, b0) = default_initial_point(&problem, DEFAULT_SPLIT_GRID).unwrap();
        let loop_cfg = OuterLoopConfig { max_outer_iters: 0, ..Default::default() };
        let out = alternating_optimize(&problem, &loop_cfg, &SeboConfig::default(), &p0, &b0).unwrap();
        assert_eq!(out.precoder, p0);
        assert_eq!(out.coders, b0);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn converged_point_stops_after_one_iteration() {
        let (antenna, samples, cfg) = small_problem(12, 6, 2);
        let problem = OptimizationProblem {
            antenna: &antenna,
            samples: &samples,
            p_t: cfg.p_t,
            sigma2: cfg.sigma2,
            mode: AccessMode::Rsma,
        };
        let (p0, b0) = default_initial_point(&problem, DEFAULT_SPLIT_GRID).unwrap();
        let loop_cfg = OuterLoopConfig::default();
        let first = alternating_optimize(&problem, &loop_cfg, &SeboConfig::default(), &p0, &b0).unwrap();
        let again =
            alternating_optimize(&problem, &loop_cfg, &SeboConfig::default(), &first.precoder, &first.coders).unwrap();
        assert_eq!(again.outer_iterations, 1);
        assert!(again.report.objective >= first.report.objective);
    }

    #[test]
    fn rsma_from_sdma_solution_is_not_worse() {
        let (antenna, samples, cfg) = small_problem(15, 6, 2);
        let mut problem = OptimizationProblem {
            antenna: &antenna,
            samples: &samples,
            p_t: cfg.p_t,
            sigma2: cfg.sigma2,
            mode: AccessMode::Sdma,
        };
        let (p0, b0) = default_initial_point(&problem, DEFAULT_SPLIT_GRID).unwrap();
        let sdma = alternating_optimize(&problem, &OuterLoopConfig::default(), &SeboConfig::default(), &p0, &b0).unwrap();
        assert!(sdma.precoder.has_zero_common());
        problem.mode = AccessMode::Rsma;
        let rsma = alternating_optimize(
            &problem,
            &OuterLoopConfig::default(),
            &SeboConfig::default(),
            &sdma.precoder,
            &sdma.coders,
        )
        .unwrap();
        assert!(rsma.report.objective >= sdma.report.objective - 1e-8);
    }
}
