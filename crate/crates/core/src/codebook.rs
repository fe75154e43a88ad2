//! Max-rate antenna-coder codebooks.
//!
//! Offline, a Lloyd iteration alternates between assigning every training
//! tuple to the codeword with the highest sum rate and re-optimizing each
//! codeword (by SEBO) for the tuples assigned to it. Online, each user in
//! turn picks the codeword that maximizes the sum rate with the closed-form
//! precoder recomputed for every candidate.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::channel::{derive_seed, draw_sample_set, draw_true_channels, substream, tag, ChannelSampleSet, ScenarioConfig};
use crate::em_model::{Antenna, AntennaCoder};
use crate::error::{Error, Result};
use crate::rsma::{baseline_precoder, code_estimates, sample_average_rates, AccessMode, PrecoderMatrix, RateReport};
use crate::sebo::{sebo_search, SeboConfig};

pub const CODEBOOK_MAGIC: &str = "antenna-codebook";
pub const CODEBOOK_VERSION: &str = "v1";

/// An ordered list of antenna coders of equal length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    codewords: Vec<AntennaCoder>,
}

impl Codebook {
    pub fn new(codewords: Vec<AntennaCoder>) -> Result<Self> {
        let q = codewords
            .first()
            .map(AntennaCoder::len)
            .ok_or_else(|| Error::InvalidArgument("codebook needs at least one codeword".into()))?;
        if q == 0 {
            return Err(Error::InvalidArgument("codewords must have at least one switch".into()));
        }
        if let Some(bad) = codewords.iter().find(|c| c.len() != q) {
            return Err(Error::dims("codeword length", q, bad.len()));
        }
        Ok(Self { codewords })
    }

    /// `m` distinct uniformly random coders of length `q`.
    pub fn random<R: Rng + ?Sized>(q: usize, m: usize, rng: &mut R) -> Result<Self> {
        if q < 64 && m as u64 > (1u64 << q) {
            return Err(Error::InvalidArgument(format!("cannot draw {m} distinct coders with Q = {q}")));
        }
        let codewords = if q <= 20 {
            index::sample(rng, 1usize << q, m)
                .into_iter()
                .map(|key| AntennaCoder::from_key(key as u64, q))
                .collect()
        } else {
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(m);
            while out.len() < m {
                let c = random_coder(rng, q);
                if seen.insert(c.clone()) {
                    out.push(c);
                }
            }
            out
        };
        Self::new(codewords)
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn num_switches(&self) -> usize {
        self.codewords[0].len()
    }

    pub fn codewords(&self) -> &[AntennaCoder] {
        &self.codewords
    }

    pub fn get(&self, m: usize) -> &AntennaCoder {
        &self.codewords[m]
    }

    pub fn contains(&self, c: &AntennaCoder) -> bool {
        self.codewords.contains(c)
    }

    pub fn has_duplicates(&self) -> bool {
        let set: HashSet<&AntennaCoder> = self.codewords.iter().collect();
        set.len() != self.codewords.len()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{CODEBOOK_MAGIC} {CODEBOOK_VERSION} Q={} M={}\n",
            self.num_switches(),
            self.len()
        );
        for c in &self.codewords {
            let _ = writeln!(out, "{c}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "empty codebook file"))?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        let field = |idx: usize, name: &str| -> Result<usize> {
            tokens
                .get(idx)
                .and_then(|t| t.strip_prefix(name))
                .and_then(|t| t.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(hline, format!("header is missing `{name}=<int>`")))
        };
        if tokens.len() != 4 || tokens[0] != CODEBOOK_MAGIC || tokens[1] != CODEBOOK_VERSION {
            return Err(Error::parse(
                hline,
                format!("header must read `{CODEBOOK_MAGIC} {CODEBOOK_VERSION} Q=<int> M=<int>`"),
            ));
        }
        let q = field(2, "Q")?;
        let m = field(3, "M")?;
        let mut codewords = Vec::with_capacity(m);
        for (line, text) in lines {
            let c: AntennaCoder = text
                .parse()
                .map_err(|_| Error::parse(line, format!("`{text}` is not a 0/1 string")))?;
            if c.len() != q {
                return Err(Error::parse(line, format!("codeword has {} bits, header says Q={q}", c.len())));
            }
            codewords.push(c);
        }
        if codewords.len() != m {
            return Err(Error::dims("codebook entries", m, codewords.len()));
        }
        Self::new(codewords)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCodebook(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn random_coder<R: Rng + ?Sized>(rng: &mut R, q: usize) -> AntennaCoder {
    AntennaCoder::new((0..q).map(|_| rng.random::<bool>()).collect())
}

/// Random coder not already in `taken`.
fn fresh_coder<R: Rng + ?Sized>(rng: &mut R, q: usize, taken: &[AntennaCoder]) -> AntennaCoder {
    loop {
        let c = random_coder(rng, q);
        if !taken.contains(&c) {
            return c;
        }
    }
}

/// Channel-estimate tuples (one per training draw), each with its SAA set.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub tuples: Vec<ChannelSampleSet>,
}

impl TrainingSet {
    /// `d` tuples from streams independent of the evaluation realizations.
    pub fn generate(cfg: &ScenarioConfig, rank: usize, d: usize) -> Self {
        let train_cfg = ScenarioConfig {
            seed: derive_seed(cfg.seed, &[tag::TRAINING]),
            ..cfg.clone()
        };
        let tuples = (0..d as u64)
            .map(|i| draw_sample_set(&train_cfg, &draw_true_channels(&train_cfg, rank, i), i))
            .collect();
        Self { tuples }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }
}

/// How a common codeword is scored on one tuple.
#[derive(Debug, Clone, Copy)]
pub struct RateContext<'a> {
    pub antenna: &'a Antenna,
    pub p_t: f64,
    pub sigma2: f64,
    pub mode: AccessMode,
    pub grid_points: usize,
}

/// Closed-form precoder and SAA rates when every user applies `coders`.
pub fn evaluate_coders(
    ctx: &RateContext,
    samples: &ChannelSampleSet,
    coders: &[AntennaCoder],
) -> Result<(PrecoderMatrix, RateReport)> {
    let rows = code_estimates(ctx.antenna, samples, coders);
    let p = baseline_precoder(ctx.mode, &rows, ctx.p_t, ctx.sigma2, ctx.grid_points)?;
    let report = sample_average_rates(ctx.antenna, samples, coders, &p, ctx.sigma2)?;
    Ok((p, report))
}

/// SAA sum rate of `tuple` when all users adopt `cw`; unusable codewords
/// are worth zero.
pub fn codeword_sum_rate(ctx: &RateContext, cw: &AntennaCoder, tuple: &ChannelSampleSet) -> f64 {
    if ctx.antenna.pattern_coder(cw).is_none() {
        return 0.0;
    }
    let coders = vec![cw.clone(); tuple.num_users()];
    evaluate_coders(ctx, tuple, &coders).map_or(0.0, |(_, r)| r.objective)
}

/// Memoized `codeword_sum_rate` over one training set. Entries are computed
/// on first use, so the table can be shared by trainings of several sizes.
pub struct RateOracle<'a> {
    ctx: RateContext<'a>,
    set: &'a TrainingSet,
    memo: HashMap<AntennaCoder, Vec<f64>>,
    evaluations: usize,
}

impl<'a> RateOracle<'a> {
    pub fn new(ctx: RateContext<'a>, set: &'a TrainingSet) -> Self {
        Self {
            ctx,
            set,
            memo: HashMap::new(),
            evaluations: 0,
        }
    }

    pub fn training_set(&self) -> &TrainingSet {
        self.set
    }

    pub fn num_switches(&self) -> usize {
        self.ctx.antenna.num_switches()
    }

    /// Distinct `(codeword, tuple)` rates computed so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn rate(&mut self, cw: &AntennaCoder, d: usize) -> f64 {
        let n = self.set.len();
        let row = self.memo.entry(cw.clone()).or_insert_with(|| vec![f64::NAN; n]);
        if row[d].is_nan() {
            row[d] = codeword_sum_rate(&self.ctx, cw, &self.set.tuples[d]);
            self.evaluations += 1;
        }
        row[d]
    }

    /// Mean rate of `cw` over the tuples in `subset`, summed in index order.
    pub fn subset_average(&mut self, cw: &AntennaCoder, subset: &[usize]) -> f64 {
        if subset.is_empty() {
            return 0.0;
        }
        let sum: f64 = subset.iter().map(|&d| self.rate(cw, d)).sum();
        sum / subset.len() as f64
    }
}

/// Assigns each tuple to its best codeword (ties to the lowest index).
/// Returns the cells and the resulting training-set average rate.
pub fn lloyd_partition(cb: &Codebook, oracle: &mut RateOracle) -> (Vec<Vec<usize>>, f64) {
    let mut cells = vec![Vec::new(); cb.len()];
    let mut total = 0.0;
    let d_count = oracle.training_set().len();
    for d in 0..d_count {
        let mut best = (0, f64::NEG_INFINITY);
        for (m, cw) in cb.codewords().iter().enumerate() {
            let r = oracle.rate(cw, d);
            if r > best.1 {
                best = (m, r);
            }
        }
        cells[best.0].push(d);
        total += best.1;
    }
    (cells, total / d_count.max(1) as f64)
}

/// Re-optimizes every codeword for its cell. Empty cells and codewords that
/// collide with an earlier one are replaced by fresh random coders.
pub fn lloyd_centroid_update<R: Rng + ?Sized>(
    cb: &Codebook,
    cells: &[Vec<usize>],
    oracle: &mut RateOracle,
    sebo: &SeboConfig,
    rng: &mut R,
) -> Codebook {
    let q = oracle.num_switches();
    let mut out: Vec<AntennaCoder> = Vec::with_capacity(cb.len());
    for (m, cell) in cells.iter().enumerate() {
        let next = if cell.is_empty() {
            None
        } else {
            let cfg = sebo.reseeded(derive_seed(sebo.seed, &[m as u64, rng.random()]));
            Some(sebo_search(|b| oracle.subset_average(b, cell), q, &cfg, cb.get(m)))
        };
        let next = match next {
            Some(c) if !out.contains(&c) => c,
            _ => {
                let mut taken = out.clone();
                taken.extend_from_slice(&cb.codewords()[m + 1..]);
                fresh_coder(rng, q, &taken)
            }
        };
        out.push(next);
    }
    Codebook { codewords: out }
}

#[derive(Debug, Clone)]
pub struct LloydOutcome {
    pub codebook: Codebook,
    /// Training-set average rate after every partition step.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd training from a random codebook of `m` distinct coders.
pub fn lloyd_train(
    oracle: &mut RateOracle,
    m: usize,
    sebo: &SeboConfig,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<LloydOutcome> {
    if m == 0 {
        return Err(Error::InvalidArgument("codebook size must be at least 1".into()));
    }
    if oracle.training_set().len() < m {
        log::warn!(
            "training set has {} tuples for a codebook of {m}; some cells will stay empty",
            oracle.training_set().len()
        );
    }
    let mut rng = substream(seed, &[tag::CODEBOOK, m as u64]);
    let mut cb = Codebook::random(oracle.num_switches(), m, &mut rng)?;
    let (mut cells, mut avg) = lloyd_partition(&cb, oracle);
    let mut trace = vec![avg];
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        cb = lloyd_centroid_update(&cb, &cells, oracle, sebo, &mut rng);
        let (next_cells, next_avg) = lloyd_partition(&cb, oracle);
        trace.push(next_avg);
        let change = next_avg - avg;
        cells = next_cells;
        avg = next_avg;
        if change < tol * avg.abs().max(1e-12) {
            break;
        }
    }
    Ok(LloydOutcome {
        codebook: cb,
        trace,
        iterations,
    })
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub coders: Vec<AntennaCoder>,
    pub precoder: PrecoderMatrix,
    pub report: RateReport,
    /// Objective at the random start and after every single-user update.
    pub trace: Vec<f64>,
    /// `evaluations[pass][k]`: objective evaluations spent on user `k`.
    pub evaluations: Vec<Vec<usize>>,
    pub passes: usize,
}

/// Sequential per-user codeword selection. Users start from random
/// codewords; each update scans the whole codebook for one user, keeping the
/// best (lowest index on ties). Passes repeat until the objective changes by
/// less than `1e-4` relative or `max_passes` is reached.
pub fn online_select(
    ctx: &RateContext,
    cb: &Codebook,
    samples: &ChannelSampleSet,
    max_passes: usize,
    seed: u64,
) -> Result<OnlineOutcome> {
    const REL_TOL: f64 = 1e-4;
    if cb.num_switches() != ctx.antenna.num_switches() {
        return Err(Error::dims("codeword length", ctx.antenna.num_switches(), cb.num_switches()));
    }
    let k_users = samples.num_users();
    let mut rng = substream(seed, &[tag::ONLINE]);
    let mut coders: Vec<AntennaCoder> = (0..k_users).map(|_| cb.get(rng.random_range(0..cb.len())).clone()).collect();
    let (mut p, mut report) = evaluate_coders(ctx, samples, &coders)?;
    let mut trace = vec![report.objective];
    let mut evaluations = Vec::new();
    let mut passes = 0;
    for _ in 0..max_passes.max(1) {
        passes += 1;
        let start = report.objective;
        let mut counts = vec![0usize; k_users];
        for k in 0..k_users {
            let mut best: Option<(usize, PrecoderMatrix, RateReport)> = None;
            for (m, cw) in cb.codewords().iter().enumerate() {
                let mut trial = coders.clone();
                trial[k] = cw.clone();
                let (tp, tr) = evaluate_coders(ctx, samples, &trial)?;
                counts[k] += 1;
                if best.as_ref().is_none_or(|b| tr.objective > b.2.objective) {
                    best = Some((m, tp, tr));
                }
            }
            let (m, tp, tr) = best.expect("codebook is nonempty");
            coders[k] = cb.get(m).clone();
            p = tp;
            report = tr;
            trace.push(report.objective);
        }
        evaluations.push(counts);
        if report.objective - start < REL_TOL * start.abs().max(1e-12) {
            break;
        }
    }
    Ok(OnlineOutcome {
        coders,
        precoder: p,
        report,
        trace,
        evaluations,
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::synth_pixel_hardware;
    use crate::em_model::DEFAULT_RANK_TOL;
    use crate::sebo::brute_force_best;

    fn setup(q: usize, d: usize, seed: u64) -> (Antenna, TrainingSet, ScenarioConfig) {
        let cfg = ScenarioConfig {
            n_switches: q,
            n_samples: 6,
            seed,
            ..ScenarioConfig::default()
        };
        let (net, pats) = synth_pixel_hardware(&cfg, &mut substream(seed, &[tag::HARDWARE]));
        let antenna = Antenna::new(net, pats, DEFAULT_RANK_TOL).unwrap().with_coder_table();
        let ts = TrainingSet::generate(&cfg, antenna.rank(), d);
        (antenna, ts, cfg)
    }

    fn ctx<'a>(antenna: &'a Antenna, cfg: &ScenarioConfig) -> RateContext<'a> {
        RateContext {
            antenna,
            p_t: cfg.p_t,
            sigma2: cfg.sigma2,
            mode: AccessMode::Rsma,
            grid_points: 21,
        }
    }

    #[test]
    fn file_round_trip_is_exact() {
        let mut rng = substream(3, &[]);
        let cb = Codebook::random(11, 16, &mut rng).unwrap();
        assert!(!cb.has_duplicates());
        let text = cb.to_text();
        assert!(text.starts_with("antenna-codebook v1 Q=11 M=16\n"));
        assert_eq!(Codebook::parse(&text).unwrap(), cb);
        assert_eq!(Codebook::parse(&text).unwrap().to_text(), text);
    }

    #[test]
    fn parse_rejects_bad_files() {
        assert!(Codebook::parse("antenna-codebook v1 Q=3 M=2\n010\n").is_err());
        assert!(Codebook::parse("antenna-codebook v1 Q=3 M=1\n0101\n").is_err());
        assert!(Codebook::parse("antenna-codebook v1 Q=3 M=1\n01x\n").is_err());
        assert!(Codebook::parse("codebook v1 Q=3 M=1\n010\n").is_err());
    }

    #[test]
    fn missing_file_is_reported() {
        let err = Codebook::load(Path::new("/nonexistent/cb.txt")).unwrap_err();
        assert!(matches!(err, Error::MissingCodebook(_)));
    }

    #[test]
    fn vanishing_power_gives_vanishing_rate() {
        let (antenna, ts, mut cfg) = setup(6, 1, 1);
        cfg.p_t = 1e-12;
        let r = codeword_sum_rate(&ctx(&antenna, &cfg), &AntennaCoder::zeros(6), &ts.tuples[0]);
        assert!(r <= 1e-6);
    }

    #[test]
    fn partition_matches_direct_scan() {
        let (antenna, ts, cfg) = setup(6, 8, 2);
        let c = ctx(&antenna, &cfg);
        let mut oracle = RateOracle::new(c, &ts);
        let cb = Codebook::random(6, 4, &mut substream(5, &[])).unwrap();
        let (cells, avg) = lloyd_partition(&cb, &mut oracle);
        let mut want = vec![Vec::new(); 4];
        let mut total = 0.0;
        for (d, tuple) in ts.tuples.iter().enumerate() {
            let rates: Vec<f64> = cb.codewords().iter().map(|cw| codeword_sum_rate(&c, cw, tuple)).collect();
            let best = (0..4).fold(0, |b, m| if rates[m] > rates[b] { m } else { b });
            want[best].push(d);
            total += rates[best];
        }
        assert_eq!(cells, want);
        assert!((avg - total / 8.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_codewords_send_ties_to_lowest_index() {
        let (antenna, ts, cfg) = setup(6, 5, 4);
        let mut oracle = RateOracle::new(ctx(&antenna, &cfg), &ts);
        let c = AntennaCoder::from_key(9, 6);
        let cb = Codebook::new(vec![c.clone(), c]).unwrap();
        let (cells, _) = lloyd_partition(&cb, &mut oracle);
        assert_eq!(cells[0].len(), 5);
        assert!(cells[1].is_empty());
    }

    #[test]
    fn centroids_match_brute_force() {
        let (antenna, ts, cfg) = setup(6, 6, 6);
        let mut oracle = RateOracle::new(ctx(&antenna, &cfg), &ts);
        let cb = Codebook::random(6, 2, &mut substream(8, &[])).unwrap();
        let cells = vec![vec![0, 2, 4], vec![1, 3, 5]];
        let sebo = SeboConfig { block: 6, iterations: 1, flips_per_kick: 0, restarts: 1, seed: 0 };
        let updated = lloyd_centroid_update(&cb, &cells, &mut oracle, &sebo, &mut substream(9, &[]));
        for (m, cell) in cells.iter().enumerate() {
            let (_, best) = brute_force_best(|b| oracle.subset_average(b, cell), 6);
            assert_eq!(oracle.subset_average(updated.get(m), cell), best);
        }
    }

    #[test]
    fn full_codebook_reaches_per_tuple_optimum() {
        let (antenna, ts, cfg) = setup(4, 6, 10);
        let mut oracle = RateOracle::new(ctx(&antenna, &cfg), &ts);
        let sebo = SeboConfig { block: 4, iterations: 1, flips_per_kick: 0, restarts: 1, seed: 0 };
        let out = lloyd_train(&mut oracle, 16, &sebo, 1e-3, 30, 1).unwrap();
        let bound: f64 = (0..6)
            .map(|d| brute_force_best(|b| oracle.rate(b, d), 4).1)
            .sum::<f64>()
            / 6.0;
        assert!((out.trace.last().unwrap() - bound).abs() < 1e-12);
    }

    #[test]
    fn lloyd_trace_is_monotone_and_codebook_distinct() {
        let (antenna, ts, cfg) = setup(8, 20, 12);
        let mut oracle = RateOracle::new(ctx(&antenna, &cfg), &ts);
        let sebo = SeboConfig { block: 4, iterations: 2, flips_per_kick: 4, restarts: 1, seed: 3 };
        let out = lloyd_train(&mut oracle, 4, &sebo, 1e-3, 30, 2).unwrap();
        assert!(out.trace.windows(2).all(|w| w[1] >= w[0] - 1e-8), "{:?}", out.trace);
        assert!(!out.codebook.has_duplicates());
        assert_eq!(out.codebook.len(), 4);
    }

    #[test]
    fn single_codeword_forces_selection() {
        let (antenna, ts, cfg) = setup(6, 1, 14);
        let cw = AntennaCoder::from_key(33, 6);
        let cb = Codebook::new(vec![cw.clone()]).unwrap();
        let out = online_select(&ctx(&antenna, &cfg), &cb, &ts.tuples[0], 10, 0).unwrap();
        assert_eq!(out.coders, vec![cw.clone(), cw]);
        assert_eq!(out.passes, 1);
    }

    #[test]
    fn online_selection_counts_and_monotone() {
        let (antenna, ts, cfg) = setup(8, 3, 16);
        let cb = Codebook::random(8, 12, &mut substream(1, &[])).unwrap();
        for (i, tuple) in ts.tuples.iter().enumerate() {
            let out = online_select(&ctx(&antenna, &cfg), &cb, tuple, 10, i as u64).unwrap();
            assert!(out.evaluations.iter().flatten().all(|&c| c <= 12));
            assert!(out.trace.windows(2).all(|w| w[1] >= w[0] - 1e-8));
            assert!(out.coders.iter().all(|c| cb.contains(c)));
        }
    }

    #[test]
    fn single_user_selection_over_all_coders_is_exhaustive() {
        let cfg = ScenarioConfig {
            n_users: 1,
            n_switches: 5,
            n_samples: 4,
            seed: 21,
            ..ScenarioConfig::default()
        };
        let (net, pats) = synth_pixel_hardware(&cfg, &mut substream(21, &[tag::HARDWARE]));
        let antenna = Antenna::new(net, pats, DEFAULT_RANK_TOL).unwrap();
        let ts = TrainingSet::generate(&cfg, antenna.rank(), 1);
        let c = ctx(&antenna, &cfg);
        let all = Codebook::new((0..32).map(|k| AntennaCoder::from_key(k, 5)).collect()).unwrap();
        let out = online_select(&c, &all, &ts.tuples[0], 10, 0).unwrap();
        let (_, best) = brute_force_best(|b| codeword_sum_rate(&c, b, &ts.tuples[0]), 5);
        assert_eq!(out.report.objective, best);
    }
}
