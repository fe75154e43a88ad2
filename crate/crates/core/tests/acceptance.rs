//! Acceptance criteria 1-10. Runs as a plain binary so every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use pixel_rsma::channel::{
    derive_effective_channel, draw_sample_set, draw_true_channels, substream, synth_pixel_hardware,
    synth_virtual_scenario, tag, ScenarioConfig,
};
use pixel_rsma::codebook::{lloyd_train, online_select, RateContext, RateOracle, TrainingSet};
use pixel_rsma::em_model::{
    coded_channel_row, normalized_pattern_coder, radiation_pattern, solve_port_currents, Antenna, AntennaCoder,
    DEFAULT_RANK_TOL,
};
use pixel_rsma::harness::{draw_realization, read_results, run_experiment, ResultRow, Scheme, THREADS_ENV};
use pixel_rsma::config::ExperimentConfig;
use pixel_rsma::linalg::cn_matrix;
use pixel_rsma::rsma::{user_rates, AccessMode, CodedSamples, PrecoderMatrix, DEFAULT_SPLIT_GRID};
use pixel_rsma::sebo::{brute_force_best, sebo_search, SeboConfig};
use pixel_rsma::wmmse::{
    alternating_optimize, default_initial_point, mmse_update, CoderObjective, OptimizationProblem, OuterLoopConfig,
};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn desk(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_tx: 2,
        n_users: 2,
        n_switches: 11,
        n_samples: 20,
        alpha: 0.5,
        seed,
        ..ScenarioConfig::default()
    }
    .with_snr_db(20.0)
}

fn antenna_for(cfg: &ScenarioConfig) -> Antenna {
    let (net, pats) = synth_pixel_hardware(cfg, &mut substream(cfg.seed, &[tag::HARDWARE]));
    Antenna::new(net, pats, DEFAULT_RANK_TOL).unwrap().with_coder_table()
}

fn rate_wmmse_identity() -> Verdict {
    let mut rng = substream(101, &[1]);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=4);
        let s = rng.random_range(1..=20);
        let sigma2 = 10f64.powf(rng.random_range(-2.0..1.0));
        let rows = (0..k).map(|_| Some(cn_matrix(&mut rng, s, n, 1.0))).collect();
        let coded = CodedSamples { rows };
        let scale = 10f64.powf(rng.random_range(-1.0..2.0));
        let p = PrecoderMatrix::new(cn_matrix(&mut rng, n, k + 1, scale)).unwrap();
        let state = mmse_update(&coded, &p, sigma2);
        for (user, rows) in coded.rows.iter().enumerate() {
            let (rc, rp) = user_rates(rows.as_ref().unwrap(), &p, user, sigma2);
            let (xc, xp) = state.augmented_mse(user);
            worst = worst.max((xc - (1.0 - rc)).abs()).max((xp - (1.0 - rp)).abs());
        }
    }
    verdict(worst <= 1e-9, format!("max |xi - (1 - R)| = {worst:.3e} over 1000 instances"))
}

fn channel_path_equivalence() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for seed in 0..200u64 {
        let cfg = ScenarioConfig { n_switches: 11, n_spatial: 4, seed, ..ScenarioConfig::default() };
        let (net, pats) = synth_pixel_hardware(&cfg, &mut substream(seed, &[tag::HARDWARE]));
        let antenna = Antenna::new(net, pats, DEFAULT_RANK_TOL).unwrap();
        let scen = synth_virtual_scenario(&cfg, &mut substream(seed, &[tag::VIRTUAL]));
        let h_e = derive_effective_channel(&scen, antenna.basis()).unwrap();
        let mut rng = substream(seed, &[2]);
        let (w, i_a) = loop {
            let coder = AntennaCoder::from_key(rng.random_range(0..1 << 11), 11);
            if let Ok(found) = normalized_pattern_coder(antenna.basis(), antenna.network(), &coder) {
                let currents = solve_port_currents(antenna.network(), &coder, found.1).unwrap();
                break (found.0, (coder, currents));
            }
        };
        let e = radiation_pattern(antenna.patterns(), &i_a.1).unwrap();
        for (k, hv) in scen.h_v.iter().enumerate() {
            let direct = e.transpose() * hv * &scen.e_t;
            let coded = coded_channel_row(&w, &h_e[k]).unwrap();
            let num = direct.iter().zip(&coded).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let den = direct.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(num / den);
            rows += 1;
        }
    }
    verdict(worst <= 1e-10, format!("max relative error {worst:.3e} over {rows} rows in 200 scenarios"))
}

fn sebo_exactness() -> Verdict {
    let q = 10;
    let (mut exact, mut near) = (0, 0);
    let full = SeboConfig { block: 10, iterations: 1, flips_per_kick: 10, restarts: 1, seed: 0 };
    for t in 0..100u64 {
        let cfg = ScenarioConfig { n_switches: q, n_samples: 10, seed: 1000 + t, ..ScenarioConfig::default() };
        let antenna = antenna_for(&cfg);
        let samples = draw_sample_set(&cfg, &draw_true_channels(&cfg, antenna.rank(), 0), 0);
        let mut rng = substream(cfg.seed, &[3]);
        let p = PrecoderMatrix::new(cn_matrix(&mut rng, cfg.n_tx, cfg.n_users + 1, cfg.p_t / 3.0 / cfg.n_tx as f64)).unwrap();
        let coders: Vec<AntennaCoder> =
            (0..cfg.n_users).map(|_| AntennaCoder::from_key(rng.random_range(0..1 << q), q)).collect();
        let objective = CoderObjective::new(&antenna, &samples, &coders, &p, 0, cfg.sigma2).unwrap();
        let f = |b: &AntennaCoder| objective.eval(b);
        let (_, best) = brute_force_best(f, q);
        let init = AntennaCoder::zeros(q);
        if f(&sebo_search(f, q, &full.reseeded(t), &init)) == best {
            exact += 1;
        }
        let partial = SeboConfig { block: 4, flips_per_kick: 4, seed: t, ..SeboConfig::default() };
        if f(&sebo_search(f, q, &partial, &init)) >= 0.95 * best {
            near += 1;
        }
    }
    verdict(
        exact == 100 && near >= 95,
        format!("J=10 exact on {exact}/100; J=4 within 95% on {near}/100"),
    )
}

fn optimize(cfg: &ScenarioConfig, antenna: &Antenna, mode: AccessMode, warm: Option<(&PrecoderMatrix, &[AntennaCoder])>) -> pixel_rsma::wmmse::OptimizationOutcome {
    let samples = draw_sample_set(cfg, &draw_true_channels(cfg, antenna.rank(), 0), 0);
    let problem = OptimizationProblem { antenna, samples: &samples, p_t: cfg.p_t, sigma2: cfg.sigma2, mode };
    let sebo = SeboConfig { seed: cfg.seed, ..SeboConfig::default() };
    match warm {
        Some((p, b)) => alternating_optimize(&problem, &OuterLoopConfig::default(), &sebo, p, b).unwrap(),
        None => {
            let (p0, b0) = default_initial_point(&problem, DEFAULT_SPLIT_GRID).unwrap();
            alternating_optimize(&problem, &OuterLoopConfig::default(), &sebo, &p0, &b0).unwrap()
        }
    }
}

fn alternating_monotone() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut iters = 0;
    for run in 0..50u64 {
        let cfg = desk(2000 + run);
        let antenna = antenna_for(&cfg);
        let out = optimize(&cfg, &antenna, AccessMode::Rsma, None);
        iters += out.outer_iterations;
        for w in out.trace.windows(2) {
            worst = worst.max(w[0] - w[1]);
        }
    }
    verdict(worst <= 1e-8, format!("largest trace decrease {worst:.3e} over 50 runs, {iters} outer iterations"))
}

fn rsma_dominates_sdma() -> Verdict {
    let mut ok = 0;
    let mut worst = f64::INFINITY;
    for run in 0..50u64 {
        let cfg = desk(3000 + run);
        let antenna = antenna_for(&cfg);
        let sdma = optimize(&cfg, &antenna, AccessMode::Sdma, None);
        let rsma = optimize(&cfg, &antenna, AccessMode::Rsma, Some((&sdma.precoder, &sdma.coders)));
        let margin = rsma.report.objective - sdma.report.objective;
        worst = worst.min(margin);
        if margin >= -1e-8 {
            ok += 1;
        }
    }
    verdict(ok == 50, format!("{ok}/50 runs with RSMA >= SDMA - 1e-8; smallest margin {worst:.3e}"))
}

fn lloyd_monotone() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut lengths = Vec::new();
    for run in 0..10u64 {
        let cfg = desk(4000 + run);
        let antenna = antenna_for(&cfg);
        let set = TrainingSet::generate(&cfg, antenna.rank(), 50);
        let ctx = RateContext { antenna: &antenna, p_t: cfg.p_t, sigma2: cfg.sigma2, mode: AccessMode::Rsma, grid_points: DEFAULT_SPLIT_GRID };
        let mut oracle = RateOracle::new(ctx, &set);
        let sebo = SeboConfig { seed: run, ..SeboConfig::default() };
        let out = lloyd_train(&mut oracle, 16, &sebo, 1e-3, 30, run).unwrap();
        for w in out.trace.windows(2) {
            worst = worst.max(w[0] - w[1]);
        }
        lengths.push(out.trace.len());
    }
    verdict(worst <= 1e-8, format!("largest average-rate decrease {worst:.3e}; trace lengths {lengths:?}"))
}

fn online_selection() -> Verdict {
    let m = 16;
    let cfg = desk(5000);
    let antenna = antenna_for(&cfg);
    let set = TrainingSet::generate(&cfg, antenna.rank(), 50);
    let ctx = RateContext { antenna: &antenna, p_t: cfg.p_t, sigma2: cfg.sigma2, mode: AccessMode::Rsma, grid_points: DEFAULT_SPLIT_GRID };
    let mut oracle = RateOracle::new(ctx, &set);
    let cb = lloyd_train(&mut oracle, m, &SeboConfig::default(), 1e-3, 30, 1).unwrap().codebook;
    let (mut count_ok, mut mono_ok, mut max_count, mut updates) = (0, 0, 0, 0);
    for run in 0..50u64 {
        let r = draw_realization(&cfg, antenna.rank(), run);
        let out = online_select(&ctx, &cb, &r.samples, 10, run).unwrap();
        let counts = out.evaluations.iter().flatten().copied();
        max_count = max_count.max(counts.clone().max().unwrap_or(0));
        count_ok += usize::from(counts.clone().all(|c| c <= m));
        mono_ok += usize::from(out.trace.windows(2).all(|w| w[1] >= w[0]));
        updates += out.trace.len() - 1;
    }
    verdict(
        count_ok == 50 && mono_ok == 50,
        format!("counter <= M on {count_ok}/50 (max {max_count}); monotone on {mono_ok}/50 ({updates} updates)"),
    )
}

const ORDERING_CONFIG: &str = "N = 2
K = 2
Q = 11
alpha = 0.5
S = 20
realizations = 100
snr_db = 20
scheme = rsma-wmmse-sebo, sdma-wmmse-sebo, conv-rs-zf-svd, conv-sdma-zf
seed = 1
";

fn run_cli(config: &Path, out: &Path, threads: usize) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_pixel-rsma"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env(THREADS_ENV, threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).into_owned())
    }
}

fn row(rows: &[ResultRow], scheme: Scheme) -> &ResultRow {
    rows.iter().find(|r| r.scheme == scheme).expect("scheme present")
}

/// `a - b` measured against twice the combined standard error.
fn gap(a: &ResultRow, b: &ResultRow) -> (f64, f64) {
    (a.sum_rate - b.sum_rate, 2.0 * a.stderr.hypot(b.stderr))
}

fn scheme_ordering(dir: &Path) -> Verdict {
    let config = dir.join("ordering.cfg");
    let out = dir.join("ordering_threads1.csv");
    std::fs::write(&config, ORDERING_CONFIG).unwrap();
    if let Err(e) = run_cli(&config, &out, 1) {
        return verdict(false, format!("run failed: {e}"));
    }
    let rows = read_results(&out).unwrap();
    let pairs = [
        (Scheme::RsmaWmmseSebo, Scheme::SdmaWmmseSebo),
        (Scheme::RsmaWmmseSebo, Scheme::ConvRsZfSvd),
        (Scheme::SdmaWmmseSebo, Scheme::ConvSdmaZf),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (a, b) in pairs {
        let (g, need) = gap(row(&rows, a), row(&rows, b));
        passed &= g >= need;
        parts.push(format!("{a} - {b} = {g:.3} (2se {need:.3})"));
    }
    verdict(passed, parts.join("; "))
}

fn codebook_trend() -> Verdict {
    let mut cfg = ExperimentConfig::parse(
        "N = 2\nK = 2\nQ = 11\nalpha = 0.5\nS = 20\nrealizations = 100\nsnr_db = 20\nseed = 1\nM = 4, 16, 64\nscheme = rsma-codebook-zf, sdma-codebook-zf",
    )
    .unwrap();
    cfg.timing = false;
    let rows = run_experiment(&cfg).unwrap();
    let mut passed = true;
    let mut parts = Vec::new();
    for scheme in [Scheme::RsmaCodebookZf, Scheme::SdmaCodebookZf] {
        let series: Vec<&ResultRow> = rows.iter().filter(|r| r.scheme == scheme).collect();
        for w in series.windows(2) {
            let (g, need) = gap(w[1], w[0]);
            passed &= g >= -need;
        }
        let means: Vec<String> = series.iter().map(|r| format!("{:.3}", r.sum_rate)).collect();
        parts.push(format!("{scheme} [{}]", means.join(", ")));
    }
    for m in [4, 16, 64] {
        let at = |s: Scheme| rows.iter().find(|r| r.scheme == s && r.m == m).unwrap();
        let (g, need) = gap(at(Scheme::RsmaCodebookZf), at(Scheme::SdmaCodebookZf));
        passed &= g >= -need;
        parts.push(format!("M={m} rsma-sdma {g:+.3} (2se {need:.3})"));
    }
    verdict(passed, parts.join("; "))
}

fn determinism(dir: &Path) -> Verdict {
    let config = dir.join("ordering.cfg");
    let out = dir.join("ordering_threads4.csv");
    if let Err(e) = run_cli(&config, &out, 4) {
        return verdict(false, format!("run failed: {e}"));
    }
    let a = std::fs::read(dir.join("ordering_threads1.csv")).unwrap();
    let b = std::fs::read(&out).unwrap();
    verdict(a == b && !a.is_empty(), format!("threads=1 vs threads=4: {} vs {} bytes, identical: {}", a.len(), b.len(), a == b))
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let dir_path = dir.path().to_path_buf();
    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Verdict>)> = vec![
        ("1 rate-wmmse identity", Duration::from_secs(10), Box::new(rate_wmmse_identity)),
        ("2 channel path equivalence", Duration::from_secs(10), Box::new(channel_path_equivalence)),
        ("3 sebo exactness", Duration::from_secs(60), Box::new(sebo_exactness)),
        ("4 monotone alternating optimization", Duration::from_secs(300), Box::new(alternating_monotone)),
        ("5 rsma dominates sdma from warm start", Duration::from_secs(300), Box::new(rsma_dominates_sdma)),
        ("6 lloyd monotonicity", Duration::from_secs(300), Box::new(lloyd_monotone)),
        ("7 online selection complexity", Duration::from_secs(120), Box::new(online_selection)),
        ("8 scheme ordering at 20 dB", Duration::from_secs(900), {
            let d = dir_path.clone();
            Box::new(move || scheme_ordering(&d))
        }),
        ("9 codebook size trend", Duration::from_secs(900), Box::new(codebook_trend)),
        ("10 thread-count determinism", Duration::from_secs(900), {
            let d = dir_path.clone();
            Box::new(move || determinism(&d))
        }),
    ];
    let mut failures = 0;
    for (name, limit, check) in &criteria {
        let start = Instant::now();
        let v = check();
        let elapsed = start.elapsed();
        let ok = v.passed && elapsed <= *limit;
        failures += usize::from(!ok);
        println!(
            "{} criterion {name}: {} [{:.1}s, limit {}s]",
            if ok { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
