use std::hint::black_box;

use cfrs::rsmodel::{simulate_transmission_with, RsConfiguration};
use cfrs::run::sweep;
use cfrs::scenario::build_scenario;
use cfrs::solver::initialize_sca;
use cfrs::{Execution, ScenarioConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const POLICIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn small_config() -> ScenarioConfig {
    ScenarioConfig {
        n_users: 4,
        n_aps: 2,
        antennas_per_ap: 2,
        observation_length_s: 1.0,
        blockage_times_s: vec![0.5],
        ..ScenarioConfig::default()
    }
}

fn bench_sweep(c: &mut Criterion) {
    let config = small_config();
    let mut group = c.benchmark_group("sweep_8_seeds");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| {
            b.iter(|| sweep(black_box(&config), 0..8, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_oracle(c: &mut Criterion) {
    let config = ScenarioConfig::default();
    let (_, h, _) = build_scenario(&config);
    let mut rs = RsConfiguration::isolated(config.n_users, config.decode_layer_cap);
    rs.add_decoder(1, 0).unwrap();
    let w = initialize_sca(&h, &rs, &config).unwrap().w_tilde;
    let sigma2 = config.noise_power_w();

    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(20);
    for n in [10_000usize, 100_000] {
        for (name, exec) in POLICIES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                b.iter(|| simulate_transmission_with(&w, &h, &rs, sigma2, n, &mut rng, exec))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_sweep, bench_oracle);
criterion_main!(benches);
