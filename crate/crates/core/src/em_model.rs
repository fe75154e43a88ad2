//! Multiport-network model of a switch-reconfigurable pixel antenna.
//!
//! A pixel antenna with `Q` RF switches is a `(Q+1)`-port network: one
//! antenna port (index 0) and `Q` pixel ports. A binary antenna coder sets
//! every pixel port either to a short circuit (`b_q = 0`) or an open circuit
//! (`b_q = 1`). The coder determines the port currents, which in turn weight
//! the open-circuit port patterns into the radiated pattern.
//!
//! Open circuits are handled by port elimination: the rows and columns of
//! the open ports are dropped from `Z_PP` before solving, and the open ports
//! carry exactly zero current.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{svd_sorted, CMatrix, CVector, C64, ONE, ZERO};

/// Rank cutoff for the pattern SVD, relative to the largest singular value.
pub const DEFAULT_RANK_TOL: f64 = 1e-6;
/// Pivot ratio below which the closed-port subnetwork counts as singular.
pub const SINGULAR_PIVOT_TOL: f64 = 1e-12;
/// Unnormalized pattern-coder norm below which a coder radiates nothing.
pub const ZERO_PATTERN_TOL: f64 = 1e-12;
/// Largest switch count for which [`Antenna::with_coder_table`] enumerates
/// every coder up front.
pub const MAX_TABLE_SWITCHES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceNetwork {
    z_aa: C64,
    z_pp: CMatrix,
    z_pa: CVector,
}

impl ImpedanceNetwork {
    pub fn new(z_aa: C64, z_pp: CMatrix, z_pa: CVector) -> Result<Self> {
        let q = z_pa.len();
        if q == 0 {
            return Err(Error::InvalidArgument("network needs at least one pixel port".into()));
        }
        if z_pp.nrows() != q {
            return Err(Error::dims("Z_PP rows", q, z_pp.nrows()));
        }
        if z_pp.ncols() != q {
            return Err(Error::dims("Z_PP columns", q, z_pp.ncols()));
        }
        let scale = z_pp.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
        for i in 0..q {
            for j in (i + 1)..q {
                if (z_pp[(i, j)] - z_pp[(j, i)]).norm() > 1e-9 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "Z_PP is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let all_finite = z_aa.re.is_finite()
            && z_aa.im.is_finite()
            && z_pp.iter().chain(z_pa.iter()).all(|z| z.re.is_finite() && z.im.is_finite());
        if !all_finite {
            return Err(Error::InvalidArgument("impedance entries must be finite".into()));
        }
        Ok(Self { z_aa, z_pp, z_pa })
    }

    /// Splits an assembled `(Q+1)x(Q+1)` matrix `[z_AA, z_PA^T; z_PA, Z_PP]`.
    pub fn from_full(z: &CMatrix) -> Result<Self> {
        if z.nrows() != z.ncols() {
            return Err(Error::dims("impedance matrix columns", z.nrows(), z.ncols()));
        }
        if z.nrows() < 2 {
            return Err(Error::InvalidArgument("impedance matrix must be at least 2x2".into()));
        }
        let q = z.nrows() - 1;
        let z_pa = CVector::from_iterator(q, (1..=q).map(|i| z[(i, 0)]));
        for i in 1..=q {
            if (z[(0, i)] - z[(i, 0)]).norm() > 1e-9 * z[(i, 0)].norm().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "impedance matrix is not symmetric at (0, {i})"
                )));
            }
        }
        let z_pp = z.view((1, 1), (q, q)).into_owned();
        Self::new(z[(0, 0)], z_pp, z_pa)
    }

    pub fn full_matrix(&self) -> CMatrix {
        let q = self.num_switches();
        let mut z = CMatrix::zeros(q + 1, q + 1);
        z[(0, 0)] = self.z_aa;
        for i in 0..q {
            z[(0, i + 1)] = self.z_pa[i];
            z[(i + 1, 0)] = self.z_pa[i];
        }
        z.view_mut((1, 1), (q, q)).copy_from(&self.z_pp);
        z
    }

    pub fn num_switches(&self) -> usize {
        self.z_pa.len()
    }

    pub fn z_aa(&self) -> C64 {
        self.z_aa
    }

    pub fn z_pp(&self) -> &CMatrix {
        &self.z_pp
    }

    pub fn z_pa(&self) -> &CVector {
        &self.z_pa
    }

    /// Smallest eigenvalue of `Re(Z)`; non-negative for a passive network.
    pub fn min_resistance_eigenvalue(&self) -> f64 {
        let re = self.full_matrix().map(|z| z.re);
        re.symmetric_eigen().eigenvalues.min()
    }
}

/// Binary switch states of one pixel antenna. `true` (`b_q = 1`) is an open
/// circuit, `false` (`b_q = 0`) a short circuit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AntennaCoder {
    bits: Vec<bool>,
}

impl AntennaCoder {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(q: usize) -> Self {
        Self { bits: vec![false; q] }
    }

    pub fn ones(q: usize) -> Self {
        Self { bits: vec![true; q] }
    }

    /// Builds a coder from `0`/`1` bytes; any other value is rejected.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        bytes
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::InvalidArgument(format!("coder entry {other} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    /// Inverse of [`AntennaCoder::key`]: bit `q` of `key` is `b_q`.
    pub fn from_key(key: u64, q: usize) -> Self {
        Self {
            bits: (0..q).map(|i| (key >> i) & 1 == 1).collect(),
        }
    }

    /// Compact integer form for `Q <= 64`.
    pub fn key(&self) -> Option<u64> {
        if self.bits.len() > 64 {
            return None;
        }
        Some(
            self.bits
                .iter()
                .enumerate()
                .fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i)),
        )
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, open: bool) {
        self.bits[i] = open;
    }

    pub fn flip(&mut self, i: usize) {
        self.bits[i] = !self.bits[i];
    }

    pub fn count_open(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl fmt::Display for AntennaCoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for AntennaCoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidArgument(format!("coder character {other:?} is not 0/1"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }
}

/// Currents at all `Q+1` ports; entry 0 is the antenna-port current.
#[derive(Debug, Clone, PartialEq)]
pub struct PortCurrents(CVector);

impl PortCurrents {
    pub fn antenna_current(&self) -> C64 {
        self.0[0]
    }

    pub fn as_vector(&self) -> &CVector {
        &self.0
    }

    pub fn as_slice(&self) -> &[C64] {
        self.0.as_slice()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<CVector> for PortCurrents {
    fn from(v: CVector) -> Self {
        Self(v)
    }
}

pub fn solve_port_currents(
    net: &ImpedanceNetwork,
    coder: &AntennaCoder,
    i_a: C64,
) -> Result<PortCurrents> {
    let q = net.num_switches();
    if coder.len() != q {
        return Err(Error::dims("antenna coder length", q, coder.len()));
    }
    if !(i_a.re.is_finite() && i_a.im.is_finite()) {
        return Err(Error::InvalidArgument("antenna-port current must be finite".into()));
    }
    let closed: Vec<usize> = (0..q).filter(|&i| !coder.get(i)).collect();
    let mut currents = CVector::zeros(q + 1);
    currents[0] = i_a;
    if closed.is_empty() {
        return Ok(PortCurrents(currents));
    }

    let m = closed.len();
    let sub = CMatrix::from_fn(m, m, |r, c| net.z_pp[(closed[r], closed[c])]);
    let rhs = CVector::from_iterator(m, closed.iter().map(|&i| -net.z_pa[i]));
    let lu = sub.lu();
    let u = lu.u();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..m {
        let p = u[(i, i)].norm();
        lo = lo.min(p);
        hi = hi.max(p);
    }
    let pivot_ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    if pivot_ratio < SINGULAR_PIVOT_TOL {
        return Err(Error::SingularSubnetwork { pivot_ratio });
    }
    let sol = lu
        .solve(&rhs)
        .ok_or(Error::SingularSubnetwork { pivot_ratio })?;
    for (k, &port) in closed.iter().enumerate() {
        currents[port + 1] = sol[k] * i_a;
    }
    Ok(PortCurrents(currents))
}

/// Open-circuit port patterns `E_oc` (`2N_s x (Q+1)`), column 0 being the
/// antenna port.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenCircuitPatterns {
    e_oc: CMatrix,
}

impl OpenCircuitPatterns {
    pub fn new(e_oc: CMatrix) -> Result<Self> {
        if e_oc.ncols() < 2 {
            return Err(Error::InvalidArgument("pattern matrix needs Q+1 >= 2 columns".into()));
        }
        if e_oc.nrows() == 0 || e_oc.nrows() % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "pattern matrix row count {} must be a positive even number (two polarizations)",
                e_oc.nrows()
            )));
        }
        Ok(Self { e_oc })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.e_oc
    }

    pub fn num_ports(&self) -> usize {
        self.e_oc.ncols()
    }

    pub fn num_spatial_samples(&self) -> usize {
        self.e_oc.nrows() / 2
    }
}

/// Superposes the port patterns with the given currents (`E_oc i`). The
/// result is not normalized.
pub fn radiation_pattern(patterns: &OpenCircuitPatterns, currents: &PortCurrents) -> Result<CVector> {
    if patterns.num_ports() != currents.len() {
        return Err(Error::dims("port currents", patterns.num_ports(), currents.len()));
    }
    Ok(patterns.matrix() * currents.as_vector())
}

/// Truncated SVD `E_oc ~ U S V^H` defining the effective receive space.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternBasis {
    u: CMatrix,
    s: Vec<f64>,
    v: CMatrix,
}

impl PatternBasis {
    /// Effective aerial degrees of freedom.
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn u(&self) -> &CMatrix {
        &self.u
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.s
    }

    pub fn v(&self) -> &CMatrix {
        &self.v
    }

    pub fn num_ports(&self) -> usize {
        self.v.nrows()
    }

    /// `S V^T conj(i)` without normalization.
    pub fn project_currents(&self, currents: &[C64]) -> CVector {
        let r = self.rank();
        CVector::from_iterator(
            r,
            (0..r).map(|j| {
                let acc = currents
                    .iter()
                    .enumerate()
                    .fold(ZERO, |acc, (p, c)| acc + self.v[(p, j)] * c.conj());
                acc * self.s[j]
            }),
        )
    }
}

pub fn pattern_basis(patterns: &OpenCircuitPatterns, tol: f64) -> Result<PatternBasis> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidArgument(format!("rank tolerance {tol} outside (0, 1)")));
    }
    let svd = svd_sorted(patterns.matrix());
    let largest = svd.s.first().copied().unwrap_or(0.0);
    if !(largest > 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let r = svd.s.iter().take_while(|&&s| s > tol * largest).count();
    Ok(PatternBasis {
        u: svd.u.columns(0, r).into_owned(),
        s: svd.s[..r].to_vec(),
        v: svd.v.columns(0, r).into_owned(),
    })
}

/// Unit-norm pattern coder `w = S V^T conj(i)` in the pattern basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternCoder(CVector);

impl PatternCoder {
    /// Normalizes an arbitrary nonzero vector.
    pub fn from_unnormalized(w: CVector) -> Result<Self> {
        let norm = w.norm();
        if !(norm >= ZERO_PATTERN_TOL) {
            return Err(Error::ZeroPattern { norm });
        }
        Ok(Self(w.unscale(norm)))
    }

    pub fn as_vector(&self) -> &CVector {
        &self.0
    }

    pub fn as_slice(&self) -> &[C64] {
        self.0.as_slice()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Returns the unit-norm pattern coder of `coder` and the real positive
/// antenna-port current that achieves the normalization.
pub fn normalized_pattern_coder(
    basis: &PatternBasis,
    net: &ImpedanceNetwork,
    coder: &AntennaCoder,
) -> Result<(PatternCoder, C64)> {
    if basis.num_ports() != net.num_switches() + 1 {
        return Err(Error::dims("pattern basis ports", net.num_switches() + 1, basis.num_ports()));
    }
    let unit = solve_port_currents(net, coder, ONE)?;
    let w = basis.project_currents(unit.as_slice());
    let norm = w.norm();
    if !(norm >= ZERO_PATTERN_TOL) {
        return Err(Error::ZeroPattern { norm });
    }
    let i_a = 1.0 / norm;
    Ok((PatternCoder(w.scale(i_a)), C64::new(i_a, 0.0)))
}

/// `w^H H_e`: the `1 x N` channel seen through the coded pattern.
pub fn coded_channel_row(w: &PatternCoder, h_e: &CMatrix) -> Result<Vec<C64>> {
    if w.len() != h_e.nrows() {
        return Err(Error::dims("effective channel rows", w.len(), h_e.nrows()));
    }
    Ok((0..h_e.ncols())
        .map(|n| {
            w.as_slice()
                .iter()
                .enumerate()
                .fold(ZERO, |acc, (i, wi)| acc + wi.conj() * h_e[(i, n)])
        })
        .collect())
}

/// One user's pixel antenna: the network, its open-circuit patterns and the
/// derived pattern basis. Optionally carries a precomputed pattern coder for
/// every possible antenna coder.
#[derive(Debug, Clone)]
pub struct Antenna {
    network: ImpedanceNetwork,
    patterns: OpenCircuitPatterns,
    basis: PatternBasis,
    table: Option<Vec<Option<PatternCoder>>>,
}

impl Antenna {
    pub fn new(network: ImpedanceNetwork, patterns: OpenCircuitPatterns, rank_tol: f64) -> Result<Self> {
        if patterns.num_ports() != network.num_switches() + 1 {
            return Err(Error::dims(
                "pattern matrix columns",
                network.num_switches() + 1,
                patterns.num_ports(),
            ));
        }
        let basis = pattern_basis(&patterns, rank_tol)?;
        Ok(Self {
            network,
            patterns,
            basis,
            table: None,
        })
    }

    /// Enumerates all `2^Q` coders once so later lookups are free. No-op for
    /// `Q > MAX_TABLE_SWITCHES`.
    pub fn with_coder_table(mut self) -> Self {
        let q = self.num_switches();
        if q <= MAX_TABLE_SWITCHES {
            let table = (0..(1u64 << q))
                .map(|key| {
                    normalized_pattern_coder(&self.basis, &self.network, &AntennaCoder::from_key(key, q))
                        .ok()
                        .map(|(w, _)| w)
                })
                .collect();
            self.table = Some(table);
        }
        self
    }

    pub fn network(&self) -> &ImpedanceNetwork {
        &self.network
    }

    pub fn patterns(&self) -> &OpenCircuitPatterns {
        &self.patterns
    }

    pub fn basis(&self) -> &PatternBasis {
        &self.basis
    }

    pub fn num_switches(&self) -> usize {
        self.network.num_switches()
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    /// Pattern coder of `coder`, or `None` when the coder is unusable
    /// (zero pattern or singular subnetwork); such coders are worth rate 0.
    pub fn pattern_coder(&self, coder: &AntennaCoder) -> Option<PatternCoder> {
        if let (Some(table), Some(key)) = (&self.table, coder.key()) {
            if coder.len() == self.num_switches() {
                return table[key as usize].clone();
            }
        }
        normalized_pattern_coder(&self.basis, &self.network, coder)
            .ok()
            .map(|(w, _)| w)
    }
}
