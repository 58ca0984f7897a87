//! Single solves per method, and one small sweep run sequentially and on the
//! rayon pool.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jbps::channel::{generate_instance, ChannelConfig, NoiseParams};
use jbps::harness::{run_sweep_with, Execution, SweepConfig};
use jbps::model::{db_to_linear, dbm_to_watts, Method, Targets};

const SWEEP: &str = r#"
seed = 11
num_draws = 8
methods = ["optimal", "zf", "sinr-opt"]

[axis]
kind = "sinr-target"
values = [0, 10, 20]

[fixed]
harvest_dbm = -10.0

[channel]
num_antennas = 4
"#;

fn single_solves(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    for &(nt, k) in &[(4usize, 2usize), (4, 4), (8, 4)] {
        let inst = generate_instance(&ChannelConfig::default_scenario(nt, k, 3), &NoiseParams::default(), 0).unwrap();
        let t = Targets::uniform(k, db_to_linear(10.0), dbm_to_watts(-10.0)).unwrap();
        for m in [Method::SdrOptimal, Method::ZeroForcing, Method::SinrOptimal] {
            group.bench_with_input(BenchmarkId::new(m.as_str(), format!("nt{nt}_k{k}")), &m, |b, &m| {
                b.iter(|| jbps::harness::solve_with(m, black_box(&inst), &t, None).unwrap())
            });
        }
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let config = SweepConfig::from_toml_str(SWEEP).unwrap();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| run_sweep_with(black_box(&config), Execution::Sequential).unwrap()));
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| b.iter(|| run_sweep_with(black_box(&config), Execution::Parallel).unwrap()));
    group.finish();
}

criterion_group!(benches, single_solves, sweep);
criterion_main!(benches);
