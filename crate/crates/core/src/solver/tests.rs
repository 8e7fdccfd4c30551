use super::*;
use crate::rsmodel::per_ap_power;
use crate::scenario::build_scenario;
use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(n_users: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_users,
        n_aps: 2,
        antennas_per_ap: 2,
        seed,
        ..ScenarioConfig::default()
    }
}

#[test]
fn single_user_reaches_matched_filter_optimum() {
    let config = ScenarioConfig {
        qos_rate_bps: 1e9,
        ..small_config(1, 3)
    };
    let (_, h, _) = build_scenario(&config);
    let rs = RsConfiguration::isolated(1, config.decode_layer_cap);
    let mut state = initialize_sca(&h, &rs, &config).unwrap();
    for _ in 0..10 {
        state = sca_step(&state, &h, &rs, &config).unwrap();
    }
    let p = config.max_tx_power_w();
    let amp: f64 = (0..config.n_aps)
        .map(|n| (p * h.link(n, 0).iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt())
        .sum();
    let rate = config.bandwidth_hz * (1.0 + amp * amp / config.noise_power_w()).log2();
    let expected = (1.0 - rate / config.qos_rate_bps).powi(2);
    assert_relative_eq!(state.last_objective, expected, max_relative = 1e-4);
}

#[test]
fn zero_power_leaves_every_user_unserved() {
    let config = ScenarioConfig {
        max_tx_power_dbm: f64::NEG_INFINITY,
        ..small_config(3, 1)
    };
    let (_, h, _) = build_scenario(&config);
    let rs = RsConfiguration::isolated(3, 3);
    let state = initialize_sca(&h, &rs, &config).unwrap();
    let sol = solve_subproblem(&state, &h, &rs, &config).unwrap();
    assert_eq!(sol.objective, 3.0);
    assert!(sol.w_hat.private.iter().all(|b| b.norm() == 0.0));
}

#[test]
fn iterates_descend_and_stay_feasible() {
    for seed in 1..4 {
        let config = small_config(4, seed);
        let (_, h, _) = build_scenario(&config);
        let rs = RsConfiguration::isolated(4, 3);
        let mut state = initialize_sca(&h, &rs, &config).unwrap();
        let mut prev = state.last_objective;
        for _ in 0..8 {
            state = sca_step(&state, &h, &rs, &config).unwrap();
            assert!(state.last_objective <= prev + 1e-12, "seed {seed}");
            prev = state.last_objective;
            for n in 0..config.n_aps {
                assert!(per_ap_power(&state.w_tilde, n) <= config.max_tx_power_w() * (1.0 + 1e-6));
            }
            let achieved = achievable_rates(&state.w_tilde, &h, &rs, config.noise_power_w(), config.bandwidth_hz);
            for k in 0..4 {
                assert!(state.last_rates.private[k] <= achieved.private[k] * (1.0 + 1e-6) + 1e-6);
            }
        }
    }
}

#[test]
fn subproblem_with_common_stream_descends() {
    let config = small_config(3, 2);
    let (_, h, _) = build_scenario(&config);
    let mut rs = RsConfiguration::isolated(3, 3);
    rs.add_decoder(1, 0).unwrap();
    let mut state = initialize_sca(&h, &rs, &config).unwrap();
    let mut prev = state.last_objective;
    for _ in 0..6 {
        state = sca_step(&state, &h, &rs, &config).unwrap();
        assert!(state.last_objective <= prev + 1e-12);
        prev = state.last_objective;
    }
}

#[test]
fn converged_iterates_stay_put() {
    let config = ScenarioConfig {
        qos_rate_bps: 40e6,
        ..small_config(4, 5)
    };
    let (_, h, _) = build_scenario(&config);
    let rs = RsConfiguration::isolated(4, 3);
    let mut state = initialize_sca(&h, &rs, &config).unwrap();
    let mut calm = 0;
    for _ in 0..60 {
        let next = sca_step(&state, &h, &rs, &config).unwrap();
        let step = (next.last_objective - state.last_objective).abs();
        state = next;
        calm = if step < 1e-6 { calm + 1 } else { 0 };
        if calm == 3 {
            break;
        }
    }
    assert_eq!(calm, 3, "no stationarity within 60 steps");
    let settled = state.last_objective;
    for _ in 0..5 {
        state = sca_step(&state, &h, &rs, &config).unwrap();
        assert!((state.last_objective - settled).abs() < 1e-6);
    }
}

fn random_beams(rng: &mut ChaCha8Rng, n_aps: usize, l: usize, k: usize) -> BeamformerSet {
    let mut w = BeamformerSet::zeros(n_aps, l, k);
    for b in w.private.iter_mut().chain(w.common.iter_mut()) {
        for z in b.iter_mut() {
            *z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
    }
    w
}

#[test]
fn surrogates_are_tight_and_conservative() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = ChannelState::from_vectors(
        1,
        2,
        (0..3)
            .map(|_| DVector::from_fn(2, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
            .collect(),
    );
    let mut rs = RsConfiguration::isolated(3, 3);
    rs.add_decoder(1, 0).unwrap();
    let sigma2 = 0.3;
    let anchor = random_beams(&mut rng, 1, 2, 3);
    let gp = private_sinr(2, &anchor, &h, &rs, sigma2);
    let gc = common_sinr(1, 0, &anchor, &h, &rs, sigma2).unwrap();
    assert!(private_surrogate(2, &anchor, gp, &anchor, gp, &h, &rs, sigma2).abs() < 1e-12);
    assert!(common_surrogate(1, 0, &anchor, gc, &anchor, gc, &h, &rs, sigma2).abs() < 1e-12);
    for _ in 0..500 {
        let w = random_beams(&mut rng, 1, 2, 3);
        let t = rng.random_range(0.0..3.0);
        if private_surrogate(2, &w, t, &anchor, gp, &h, &rs, sigma2) <= 0.0 {
            assert!(private_sinr(2, &w, &h, &rs, sigma2) >= t * (1.0 - 1e-12));
        }
        if common_surrogate(1, 0, &w, t, &anchor, gc, &h, &rs, sigma2) <= 0.0 {
            assert!(common_sinr(1, 0, &w, &h, &rs, sigma2).unwrap() >= t * (1.0 - 1e-12));
        }
    }
}

#[test]
fn reduced_objective_matches_rate_grid_minimum() {
    let bandwidth = 1.0;
    let qos = [2.0, 1.5];
    let t: [[f64; 2]; 2] = [[1.5, 0.4], [0.2, 0.0]];
    let caps: Vec<(f64, f64)> = t.iter().map(|s| ((1.0 + s[0]).log2(), (1.0 + s[1]).log2())).collect();
    let steps = 400;
    let mut brute = 0.0;
    for (k, &(cp, cc)) in caps.iter().enumerate() {
        let mut best = f64::INFINITY;
        for a in 0..=steps {
            for b in 0..=steps {
                let rp = cp * a as f64 / steps as f64;
                let rc = cc * b as f64 / steps as f64;
                best = f64::min(best, ((rp + rc) / qos[k] - 1.0).powi(2));
            }
        }
        brute += best;
    }
    assert_relative_eq!(reduced_objective(&t, bandwidth, &qos), brute, max_relative = 1e-9);
}

#[test]
fn dump_lists_every_stream() {
    let config = small_config(3, 5);
    let (_, h, _) = build_scenario(&config);
    let mut rs = RsConfiguration::isolated(3, 3);
    rs.add_decoder(2, 1).unwrap();
    let state = initialize_sca(&h, &rs, &config).unwrap();
    let text = dump_subproblem(&state, &h, &rs, &config).unwrap().unwrap();
    assert!(text.starts_with("# cfrs subproblem v1"));
    // common of user 1 has no beam yet but is grouped; with zero beam it stays pinned
    assert_eq!(text.lines().filter(|l| l.starts_with("stream ")).count(), 3);
}
