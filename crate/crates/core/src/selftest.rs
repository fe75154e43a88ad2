//! Fast property checks behind `pixel-rsma selftest`.

use rand::Rng;

use crate::channel::{
    derive_effective_channel, draw_sample_set, draw_true_channels, substream, synth_pixel_hardware,
    synth_virtual_scenario, tag, ScenarioConfig,
};
use crate::codebook::{lloyd_train, online_select, Codebook, RateContext, RateOracle, TrainingSet};
use crate::em_model::{
    coded_channel_row, normalized_pattern_coder, radiation_pattern, solve_port_currents, Antenna, AntennaCoder,
    DEFAULT_RANK_TOL,
};
use crate::linalg::{cn_matrix, C64};
use crate::rsma::{code_samples, user_rates, AccessMode, PrecoderMatrix, DEFAULT_SPLIT_GRID};
use crate::sebo::{brute_force_best, sebo_search, SeboConfig};
use crate::wmmse::{alternating_optimize, default_initial_point, mmse_update, OptimizationProblem, OuterLoopConfig};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn small_antenna(cfg: &ScenarioConfig) -> Antenna {
    let (net, pats) = synth_pixel_hardware(cfg, &mut substream(cfg.seed, &[tag::HARDWARE]));
    Antenna::new(net, pats, DEFAULT_RANK_TOL)
        .expect("synthetic antenna has a nonzero pattern matrix")
        .with_coder_table()
}

fn rate_identity() -> CheckResult {
    let cfg = ScenarioConfig {
        n_switches: 6,
        n_samples: 5,
        ..ScenarioConfig::default()
    };
    let antenna = small_antenna(&cfg);
    let mut rng = substream(cfg.seed, &[0xa1]);
    let mut worst: f64 = 0.0;
    for i in 0..50u64 {
        let samples = draw_sample_set(&cfg, &draw_true_channels(&cfg, antenna.rank(), i), i);
        let coders: Vec<AntennaCoder> = (0..cfg.n_users).map(|_| AntennaCoder::from_key(rng.random_range(0..64), 6)).collect();
        let coded = code_samples(&antenna, &samples, &coders);
        let m = cn_matrix(&mut rng, cfg.n_tx, cfg.n_users + 1, cfg.p_t / 3.0);
        let p = PrecoderMatrix::new(m).expect("finite precoder");
        let state = mmse_update(&coded, &p, cfg.sigma2);
        for (k, rows) in coded.rows.iter().enumerate() {
            let (rc, rp) = rows.as_ref().map_or((0.0, 0.0), |r| user_rates(r, &p, k, cfg.sigma2));
            let (xc, xp) = state.augmented_mse(k);
            worst = worst.max((xc - (1.0 - rc)).abs()).max((xp - (1.0 - rp)).abs());
        }
    }
    check("rate-wmmse identity", worst <= 1e-9, format!("max deviation {worst:.2e}"))
}

fn path_equivalence() -> CheckResult {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let cfg = ScenarioConfig {
            n_switches: 5,
            n_spatial: 4,
            seed,
            ..ScenarioConfig::default()
        };
        let antenna = small_antenna(&cfg);
        let scen = synth_virtual_scenario(&cfg, &mut substream(seed, &[tag::VIRTUAL]));
        let h_e = derive_effective_channel(&scen, antenna.basis()).expect("consistent dimensions");
        let coder = AntennaCoder::from_key(seed % 32, 5);
        let Ok((w, i_a)) = normalized_pattern_coder(antenna.basis(), antenna.network(), &coder) else {
            continue;
        };
        let currents = solve_port_currents(antenna.network(), &coder, i_a).expect("nonsingular");
        let e = radiation_pattern(antenna.patterns(), &currents).expect("dimensions");
        for (k, hv) in scen.h_v.iter().enumerate() {
            let direct = e.transpose() * hv * &scen.e_t;
            let coded = coded_channel_row(&w, &h_e[k]).expect("dimensions");
            let num: f64 = direct.iter().zip(&coded).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let den: f64 = direct.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
            worst = worst.max(num / den);
        }
    }
    check("channel path equivalence", worst <= 1e-10, format!("max relative error {worst:.2e}"))
}

fn sebo_exactness() -> CheckResult {
    let mut rng = substream(7, &[0xa2]);
    let mut exact = 0;
    let trials = 20;
    for t in 0..trials {
        let w: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |b: &AntennaCoder| {
            let mut v = 0.0;
            for i in 0..8 {
                if b.get(i) {
                    v += w[i * 8 + i];
                    for j in (i + 1)..8 {
                        if b.get(j) {
                            v += w[i * 8 + j];
                        }
                    }
                }
            }
            v
        };
        let cfg = SeboConfig { block: 8, iterations: 1, flips_per_kick: 0, restarts: 1, seed: t };
        let got = sebo_search(f, 8, &cfg, &AntennaCoder::zeros(8));
        if f(&got) == brute_force_best(f, 8).1 {
            exact += 1;
        }
    }
    check("sebo exhaustive block", exact == trials, format!("{exact}/{trials} exact"))
}

fn alternating_monotone() -> CheckResult {
    let mut worst: f64 = 0.0;
    for seed in 0..3u64 {
        let cfg = ScenarioConfig {
            n_switches: 8,
            n_samples: 8,
            seed,
            ..ScenarioConfig::default()
        };
        let antenna = small_antenna(&cfg);
        let samples = draw_sample_set(&cfg, &draw_true_channels(&cfg, antenna.rank(), 0), 0);
        let problem = OptimizationProblem {
            antenna: &antenna,
            samples: &samples,
            p_t: cfg.p_t,
            sigma2: cfg.sigma2,
            mode: AccessMode::Rsma,
        };
        let Ok((p0, b0)) = default_initial_point(&problem, DEFAULT_SPLIT_GRID) else {
            return check("alternating optimization monotone", false, "no initial point".into());
        };
        match alternating_optimize(&problem, &OuterLoopConfig::default(), &SeboConfig::default(), &p0, &b0) {
            Ok(out) => {
                for w in out.trace.windows(2) {
                    worst = worst.max(w[0] - w[1]);
                }
            }
            Err(e) => return check("alternating optimization monotone", false, e.to_string()),
        }
    }
    check(
        "alternating optimization monotone",
        worst <= 1e-8,
        format!("largest decrease {worst:.2e}"),
    )
}

fn codebook_monotone() -> CheckResult {
    let cfg = ScenarioConfig {
        n_switches: 6,
        n_samples: 4,
        ..ScenarioConfig::default()
    };
    let antenna = small_antenna(&cfg);
    let set = TrainingSet::generate(&cfg, antenna.rank(), 12);
    let ctx = RateContext {
        antenna: &antenna,
        p_t: cfg.p_t,
        sigma2: cfg.sigma2,
        mode: AccessMode::Rsma,
        grid_points: 21,
    };
    let mut oracle = RateOracle::new(ctx, &set);
    let sebo = SeboConfig { block: 3, iterations: 1, flips_per_kick: 2, restarts: 1, seed: 1 };
    let lloyd = match lloyd_train(&mut oracle, 4, &sebo, 1e-3, 10, 1) {
        Ok(l) => l,
        Err(e) => return check("codebook training and selection", false, e.to_string()),
    };
    let lloyd_ok = lloyd.trace.windows(2).all(|w| w[1] >= w[0] - 1e-8);
    let cb: &Codebook = &lloyd.codebook;
    let mut online_ok = true;
    for (i, tuple) in set.tuples.iter().enumerate().take(4) {
        match online_select(&ctx, cb, tuple, 10, i as u64) {
            Ok(out) => {
                online_ok &= out.trace.windows(2).all(|w| w[1] >= w[0] - 1e-8);
                online_ok &= out.evaluations.iter().flatten().all(|&c| c <= cb.len());
            }
            Err(_) => online_ok = false,
        }
    }
    check(
        "codebook training and selection",
        lloyd_ok && online_ok,
        format!("lloyd monotone: {lloyd_ok}, online monotone and bounded: {online_ok}"),
    )
}

fn phase_invariance() -> CheckResult {
    let mut rng = substream(3, &[0xa3]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let h = cn_matrix(&mut rng, 1, 2, 1.0);
        let p = PrecoderMatrix::new(cn_matrix(&mut rng, 2, 3, 1.0)).expect("finite");
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let rot = h.map(|z| z * C64::from_polar(1.0, phi));
        let a = user_rates(&h, &p, 0, 1.0);
        let b = user_rates(&rot, &p, 0, 1.0);
        worst = worst.max((a.0 - b.0).abs()).max((a.1 - b.1).abs());
    }
    check("sinr phase invariance", worst <= 1e-12, format!("max deviation {worst:.2e}"))
}

/// Runs every check; the suite passes when all of them do.
pub fn run_selftest() -> Vec<CheckResult> {
    vec![
        rate_identity(),
        path_equivalence(),
        phase_invariance(),
        sebo_exactness(),
        alternating_monotone(),
        codebook_monotone(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        for r in run_selftest() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
