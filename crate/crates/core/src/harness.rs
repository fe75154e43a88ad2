//! Experiment orchestration: scheme runners, Monte-Carlo averaging and
//! results files.
//!
//! Every realization draws its channels, SAA samples and evaluation samples
//! from substreams addressed by its index, and all schemes at one SNR point
//! see the same realizations. Realizations run on a rayon pool whose size is
//! capped by `PIXEL_RSMA_THREADS`; results are reduced in index order, so the
//! output does not depend on the worker count.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::antenna_file::read_antenna_file;
use crate::channel::{
    conditional_samples, derive_seed, draw_sample_set, draw_true_channels, substream, synth_pixel_hardware, tag,
    ChannelSampleSet, ScenarioConfig,
};
use crate::codebook::{lloyd_train, online_select, Codebook, LloydOutcome, RateContext, RateOracle, TrainingSet};
use crate::config::ExperimentConfig;
use crate::em_model::{Antenna, AntennaCoder};
use crate::error::{Error, Result};
use crate::rsma::{baseline_precoder, code_estimates, sample_average_rates, AccessMode, PrecoderMatrix};
use crate::wmmse::{alternating_optimize, default_initial_point, OptimizationProblem};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "PIXEL_RSMA_THREADS";

pub const RESULTS_HEADER: [&str; 9] = [
    "scheme",
    "snr_db",
    "M",
    "Q",
    "sum_rate",
    "stderr",
    "realizations",
    "seed",
    "wall_time_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    RsmaWmmseSebo,
    SdmaWmmseSebo,
    RsmaCodebookZf,
    SdmaCodebookZf,
    ConvRsZfSvd,
    ConvSdmaZf,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::RsmaWmmseSebo,
        Scheme::SdmaWmmseSebo,
        Scheme::RsmaCodebookZf,
        Scheme::SdmaCodebookZf,
        Scheme::ConvRsZfSvd,
        Scheme::ConvSdmaZf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::RsmaWmmseSebo => "rsma-wmmse-sebo",
            Scheme::SdmaWmmseSebo => "sdma-wmmse-sebo",
            Scheme::RsmaCodebookZf => "rsma-codebook-zf",
            Scheme::SdmaCodebookZf => "sdma-codebook-zf",
            Scheme::ConvRsZfSvd => "conv-rs-zf-svd",
            Scheme::ConvSdmaZf => "conv-sdma-zf",
        }
    }

    pub fn mode(self) -> AccessMode {
        match self {
            Scheme::RsmaWmmseSebo | Scheme::RsmaCodebookZf | Scheme::ConvRsZfSvd => AccessMode::Rsma,
            Scheme::SdmaWmmseSebo | Scheme::SdmaCodebookZf | Scheme::ConvSdmaZf => AccessMode::Sdma,
        }
    }

    pub fn uses_codebook(self) -> bool {
        matches!(self, Scheme::RsmaCodebookZf | Scheme::SdmaCodebookZf)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::config("scheme", format!("unknown scheme `{s}`")))
    }
}

/// One line of the results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub snr_db: f64,
    /// Codebook size, or `-1` for schemes without a codebook.
    pub m: i64,
    pub q: usize,
    pub sum_rate: f64,
    pub stderr: f64,
    pub realizations: usize,
    pub seed: u64,
    pub wall_time_s: f64,
}

/// Mean and standard error of the mean (sample standard deviation over
/// `sqrt(n)`), accumulated in slice order.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Worker pool honouring `PIXEL_RSMA_THREADS`.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::config(THREADS_ENV, format!("expected a positive integer, found `{raw}`")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// The experiment's antenna: loaded from `cfg.antenna_path` or synthesized
/// from the hardware substream.
pub fn prepare_antenna(cfg: &ExperimentConfig) -> Result<Antenna> {
    let sc = &cfg.scenario;
    let (net, pats) = match &cfg.antenna_path {
        Some(path) => {
            let (net, pats) = read_antenna_file(path)?;
            if net.num_switches() != sc.n_switches {
                return Err(Error::config(
                    "antenna",
                    format!("file has Q={}, config has Q={}", net.num_switches(), sc.n_switches),
                ));
            }
            (net, pats)
        }
        None => synth_pixel_hardware(sc, &mut substream(sc.seed, &[tag::HARDWARE])),
    };
    Ok(Antenna::new(net, pats, cfg.rank_tol)?.with_coder_table())
}

/// Channels, optimization samples and evaluation samples of one realization.
pub struct Realization {
    pub samples: ChannelSampleSet,
    pub evaluation: ChannelSampleSet,
}

pub fn draw_realization(sc: &ScenarioConfig, rank: usize, index: u64) -> Realization {
    let truth = draw_true_channels(sc, rank, index);
    let samples = draw_sample_set(sc, &truth, index);
    let evaluation = conditional_samples(
        sc.seed,
        tag::EVAL_SAMPLE,
        index,
        &samples.estimates(),
        sc.error_variance(),
        sc.n_samples,
    );
    Realization { samples, evaluation }
}

/// Precoder and coders chosen by `scheme` for one realization.
pub fn run_scheme(
    scheme: Scheme,
    cfg: &ExperimentConfig,
    sc: &ScenarioConfig,
    antenna: &Antenna,
    samples: &ChannelSampleSet,
    codebook: Option<&Codebook>,
    stream: u64,
) -> Result<(PrecoderMatrix, Vec<AntennaCoder>)> {
    let mode = scheme.mode();
    match scheme {
        Scheme::ConvRsZfSvd | Scheme::ConvSdmaZf => {
            let coders = vec![AntennaCoder::zeros(antenna.num_switches()); samples.num_users()];
            let rows = code_estimates(antenna, samples, &coders);
            let p = baseline_precoder(mode, &rows, sc.p_t, sc.sigma2, cfg.grid_points)?;
            Ok((p, coders))
        }
        Scheme::RsmaWmmseSebo | Scheme::SdmaWmmseSebo => {
            let problem = OptimizationProblem {
                antenna,
                samples,
                p_t: sc.p_t,
                sigma2: sc.sigma2,
                mode,
            };
            let (p0, b0) = default_initial_point(&problem, cfg.grid_points)?;
            let sebo = cfg.sebo.reseeded(derive_seed(sc.seed, &[tag::SEBO, stream]));
            let out = alternating_optimize(&problem, &cfg.outer, &sebo, &p0, &b0)?;
            Ok((out.precoder, out.coders))
        }
        Scheme::RsmaCodebookZf | Scheme::SdmaCodebookZf => {
            let cb = codebook.ok_or_else(|| Error::InvalidArgument("codebook scheme run without a codebook".into()))?;
            let ctx = RateContext {
                antenna,
                p_t: sc.p_t,
                sigma2: sc.sigma2,
                mode,
                grid_points: cfg.grid_points,
            };
            let out = online_select(&ctx, cb, samples, cfg.online_max_passes, derive_seed(sc.seed, &[tag::ONLINE, stream]))?;
            Ok((out.precoder, out.coders))
        }
    }
}

/// Trains one codebook of each requested size on a shared training set.
pub fn train_codebooks(
    cfg: &ExperimentConfig,
    sc: &ScenarioConfig,
    antenna: &Antenna,
    mode: AccessMode,
    sizes: &[usize],
) -> Result<Vec<LloydOutcome>> {
    let train_sc = ScenarioConfig {
        n_samples: cfg.training_samples,
        ..sc.clone()
    };
    let set = TrainingSet::generate(&train_sc, antenna.rank(), cfg.training_tuples);
    let ctx = RateContext {
        antenna,
        p_t: sc.p_t,
        sigma2: sc.sigma2,
        mode,
        grid_points: cfg.grid_points,
    };
    let mut oracle = RateOracle::new(ctx, &set);
    sizes
        .iter()
        .map(|&m| {
            let sebo = cfg.sebo.reseeded(derive_seed(sc.seed, &[tag::CODEBOOK, m as u64]));
            lloyd_train(&mut oracle, m, &sebo, cfg.lloyd_tol, cfg.lloyd_max_iters, sc.seed)
        })
        .collect()
}

fn mode_index(mode: AccessMode) -> u64 {
    match mode {
        AccessMode::Rsma => 0,
        AccessMode::Sdma => 1,
    }
}

/// Runs every scheme at every sweep point and returns one row per
/// `(snr, scheme[, M])`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let pool = worker_pool()?;
    let antenna = prepare_antenna(cfg)?;
    let rank = antenna.rank();
    let file_codebook = match &cfg.codebook_path {
        Some(path) if cfg.schemes.iter().any(|s| s.uses_codebook()) => {
            let cb = Codebook::load(path)?;
            if cb.num_switches() != antenna.num_switches() {
                return Err(Error::config(
                    "codebook",
                    format!("codebook has Q={}, antenna has Q={}", cb.num_switches(), antenna.num_switches()),
                ));
            }
            Some(cb)
        }
        _ => None,
    };

    let mut rows = Vec::new();
    for (snr_idx, &snr_db) in cfg.snr_db.iter().enumerate() {
        let sc = cfg.scenario_at(snr_db);
        let realizations: Vec<Realization> =
            pool.install(|| (0..cfg.realizations as u64).into_par_iter().map(|i| draw_realization(&sc, rank, i)).collect());

        let mut trained: HashMap<AccessMode, Vec<Codebook>> = HashMap::new();
        for &scheme in &cfg.schemes {
            let jobs: Vec<(i64, Option<Codebook>)> = if !scheme.uses_codebook() {
                vec![(-1, None)]
            } else if let Some(cb) = &file_codebook {
                vec![(cb.len() as i64, Some(cb.clone()))]
            } else {
                let mode = scheme.mode();
                if !trained.contains_key(&mode) {
                    let started = Instant::now();
                    let out = train_codebooks(cfg, &sc, &antenna, mode, &cfg.codebook_sizes)?;
                    log::info!(
                        "trained {} codebooks for {scheme} at {snr_db} dB in {:.1}s",
                        out.len(),
                        started.elapsed().as_secs_f64()
                    );
                    trained.insert(mode, out.into_iter().map(|o| o.codebook).collect());
                }
                trained[&mode].iter().map(|cb| (cb.len() as i64, Some(cb.clone()))).collect()
            };

            for (m, cb) in jobs {
                let started = Instant::now();
                let rates: Vec<f64> = pool.install(|| {
                    realizations
                        .par_iter()
                        .enumerate()
                        .map(|(i, real)| {
                            let stream = derive_seed(i as u64, &[snr_idx as u64, mode_index(scheme.mode())]);
                            let (p, coders) = run_scheme(scheme, cfg, &sc, &antenna, &real.samples, cb.as_ref(), stream)?;
                            Ok(sample_average_rates(&antenna, &real.evaluation, &coders, &p, sc.sigma2)?.objective)
                        })
                        .collect::<Result<Vec<f64>>>()
                })?;
                let (mean, stderr) = mean_and_stderr(&rates);
                rows.push(ResultRow {
                    scheme,
                    snr_db,
                    m,
                    q: antenna.num_switches(),
                    sum_rate: mean,
                    stderr,
                    realizations: cfg.realizations,
                    seed: cfg.scenario.seed,
                    wall_time_s: if cfg.timing { started.elapsed().as_secs_f64() } else { 0.0 },
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.scheme.name().to_string(),
            format!("{:.6}", r.snr_db),
            r.m.to_string(),
            r.q.to_string(),
            format!("{:.6}", r.sum_rate),
            format!("{:.6}", r.stderr),
            r.realizations.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.wall_time_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(Error::parse(1, format!("unexpected results header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let num = |j: usize| -> Result<f64> {
            field(j)
                .parse()
                .map_err(|_| Error::parse(line, format!("column `{}` is not a number", RESULTS_HEADER[j])))
        };
        let int = |j: usize| -> Result<i64> {
            field(j)
                .parse()
                .map_err(|_| Error::parse(line, format!("column `{}` is not an integer", RESULTS_HEADER[j])))
        };
        rows.push(ResultRow {
            scheme: field(0).parse().map_err(|_| Error::parse(line, "unknown scheme"))?,
            snr_db: num(1)?,
            m: int(2)?,
            q: int(3)? as usize,
            sum_rate: num(4)?,
            stderr: num(5)?,
            realizations: int(6)? as usize,
            seed: field(7)
                .parse()
                .map_err(|_| Error::parse(line, "column `seed` is not an integer"))?,
            wall_time_s: num(8)?,
        });
    }
    Ok(rows)
}

/// Trains the codebook described by the config (first SNR point, first
/// codebook size, `codebook_mode`), writes it to `out` and returns the run.
pub fn train_codebook_cmd(config: &Path, out: &Path) -> Result<LloydOutcome> {
    let cfg = ExperimentConfig::load(config)?;
    let antenna = prepare_antenna(&cfg)?;
    let sc = cfg.scenario_at(cfg.snr_db[0]);
    let outcome = train_codebooks(&cfg, &sc, &antenna, cfg.codebook_mode, &cfg.codebook_sizes[..1])?
        .into_iter()
        .next()
        .expect("one size requested");
    outcome.codebook.save(out)?;
    Ok(outcome)
}
