use proptest::prelude::*;

use pixel_rsma::channel::{draw_sample_set, draw_true_channels, substream, synth_pixel_hardware, tag, ScenarioConfig};
use pixel_rsma::codebook::Codebook;
use pixel_rsma::em_model::{normalized_pattern_coder, Antenna, AntennaCoder, DEFAULT_RANK_TOL};
use pixel_rsma::harness::mean_and_stderr;
use pixel_rsma::linalg::cn_matrix;
use pixel_rsma::rsma::{rates_from_coded, user_rates, AccessMode, CodedSamples, PrecoderMatrix};
use pixel_rsma::sebo::{brute_force_best, sebo_search, SeboConfig};
use pixel_rsma::wmmse::{mmse_update, precoder_subproblem_solve, SubproblemConfig};

fn random_coded(seed: u64, n: usize, k: usize, s: usize) -> CodedSamples {
    let mut rng = substream(seed, &[11]);
    CodedSamples { rows: (0..k).map(|_| Some(cn_matrix(&mut rng, s, n, 1.0))).collect() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pattern_coder_is_unit_norm_with_positive_drive(seed in 0u64..1000, key in 0u64..256) {
        let cfg = ScenarioConfig { n_switches: 8, seed, ..ScenarioConfig::default() };
        let (net, pats) = synth_pixel_hardware(&cfg, &mut substream(seed, &[tag::HARDWARE]));
        let antenna = Antenna::new(net, pats, DEFAULT_RANK_TOL).unwrap();
        if let Ok((w, i_a)) = normalized_pattern_coder(antenna.basis(), antenna.network(), &AntennaCoder::from_key(key, 8)) {
            prop_assert!((w.as_vector().norm() - 1.0).abs() < 1e-12);
            prop_assert!(i_a.re > 0.0 && i_a.im == 0.0);
        }
    }

    #[test]
    fn realizations_are_estimate_plus_error(seed in 0u64..1000, realization in 0u64..100, snr in -10.0f64..30.0) {
        let cfg = ScenarioConfig { n_samples: 4, seed, ..ScenarioConfig::default() }.with_snr_db(snr);
        let set = draw_sample_set(&cfg, &draw_true_channels(&cfg, 3, realization), realization);
        for u in &set.users {
            for (h, e) in u.realizations.iter().zip(&u.errors) {
                prop_assert_eq!(h, &(&u.estimate + e));
            }
        }
    }

    #[test]
    fn augmented_mse_matches_rate(seed in 0u64..10_000, n in 1usize..4, k in 1usize..4, s in 1usize..8, sigma2 in 0.01f64..10.0) {
        let coded = random_coded(seed, n, k, s);
        let mut rng = substream(seed, &[12]);
        let p = PrecoderMatrix::new(cn_matrix(&mut rng, n, k + 1, 1.0)).unwrap();
        let state = mmse_update(&coded, &p, sigma2);
        for (user, rows) in coded.rows.iter().enumerate() {
            let (rc, rp) = user_rates(rows.as_ref().unwrap(), &p, user, sigma2);
            let (xc, xp) = state.augmented_mse(user);
            prop_assert!((xc - (1.0 - rc)).abs() < 1e-9);
            prop_assert!((xp - (1.0 - rp)).abs() < 1e-9);
        }
    }

    #[test]
    fn precoder_step_is_feasible_and_monotone(seed in 0u64..10_000, sdma in any::<bool>()) {
        let (n, k, p_t, sigma2) = (2, 2, 10.0, 1.0);
        let coded = random_coded(seed, n, k, 5);
        let mode = if sdma { AccessMode::Sdma } else { AccessMode::Rsma };
        let mut rng = substream(seed, &[13]);
        let mut m = cn_matrix(&mut rng, n, k + 1, 1.0);
        if sdma {
            m.column_mut(0).fill(Default::default());
        }
        let scale = (p_t / m.norm_squared()).sqrt();
        let p0 = PrecoderMatrix::new(m * pixel_rsma::linalg::C64::new(scale, 0.0)).unwrap();
        let state = mmse_update(&coded, &p0, sigma2);
        let before = rates_from_coded(&coded, &p0, sigma2).objective;
        if let Ok(sol) = precoder_subproblem_solve(&coded, &state, &p0, p_t, sigma2, mode, &SubproblemConfig::default()) {
            prop_assert!(sol.precoder.is_feasible(p_t));
            prop_assert!(!sdma || sol.precoder.has_zero_common());
            let after = rates_from_coded(&coded, &sol.precoder, sigma2).objective;
            prop_assert!(after >= before - 1e-8 * before.abs().max(1.0), "{} < {}", after, before);
        }
    }

    #[test]
    fn sebo_never_loses_to_its_start(weights in prop::collection::vec(-1.0f64..1.0, 36), init in 0u64..64, block in 1usize..=6, seed in any::<u64>()) {
        let f = |b: &AntennaCoder| {
            let mut v = 0.0;
            for i in 0..6 {
                for j in i..6 {
                    if b.get(i) && b.get(j) {
                        v += weights[i * 6 + j];
                    }
                }
            }
            v
        };
        let start = AntennaCoder::from_key(init, 6);
        let cfg = SeboConfig { block, iterations: 2, flips_per_kick: block.min(2), restarts: 2, seed };
        let got = sebo_search(f, 6, &cfg, &start);
        prop_assert!(f(&got) >= f(&start));
        if block == 6 {
            prop_assert_eq!(f(&got), brute_force_best(f, 6).1);
        }
    }

    #[test]
    fn codebook_text_round_trips(keys in prop::collection::btree_set(0u64..1024, 1..20)) {
        let cb = Codebook::new(keys.iter().map(|&k| AntennaCoder::from_key(k, 10)).collect()).unwrap();
        prop_assert_eq!(Codebook::parse(&cb.to_text()).unwrap(), cb);
    }

    #[test]
    fn stderr_is_non_negative_and_shift_invariant(values in prop::collection::vec(-100.0f64..100.0, 1..50), shift in -10.0f64..10.0) {
        let (m, se) = mean_and_stderr(&values);
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let (m2, se2) = mean_and_stderr(&shifted);
        prop_assert!(se >= 0.0);
        prop_assert!((m2 - m - shift).abs() < 1e-9);
        prop_assert!((se2 - se).abs() < 1e-9);
    }
}
