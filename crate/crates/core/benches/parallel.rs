//! Seed fan-out and bootstrap chunks through `par::map` against the plain
//! sequential loop. Without the `parallel` feature both arms are sequential.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lbc_core::env::EnvSpec;
use lbc_core::par;
use lbc_core::rng::{stream_rng, Rng as StreamRng};
use lbc_core::{train, ExecMode, RunConfig};
use rand::Rng;

fn seed_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        mode: ExecMode::Sequential,
        total_env_steps: 5_000,
        env: EnvSpec::deep_chain(10, 40),
        ..Default::default()
    }
}

fn run_seed(seed: &u64) -> f64 {
    let art = train(&seed_config(*seed), "bench").expect("bench run");
    art.records.iter().map(|r| r.episode_return).sum()
}

fn resample_chunk(c: &u64) -> f64 {
    let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
    let mut rng: StreamRng = stream_rng(7, 5, *c);
    (0..1024)
        .map(|_| (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).sum::<f64>())
        .sum()
}

fn seeds(c: &mut Criterion) {
    let seeds: Vec<u64> = (0..8).collect();
    let mut g = c.benchmark_group("seed_fan_out");
    g.sample_size(10);
    g.bench_function("par_map", |b| b.iter(|| black_box(par::map(&seeds, run_seed))));
    g.bench_function("sequential", |b| b.iter(|| black_box(par::map_sequential(&seeds, run_seed))));
    g.finish();
}

fn bootstrap(c: &mut Criterion) {
    let chunks: Vec<u64> = (0..10).collect();
    let mut g = c.benchmark_group("bootstrap_chunks");
    g.bench_function("par_map", |b| b.iter(|| black_box(par::map(&chunks, resample_chunk))));
    g.bench_function("sequential", |b| b.iter(|| black_box(par::map_sequential(&chunks, resample_chunk))));
    g.finish();
}

criterion_group!(benches, seeds, bootstrap);
criterion_main!(benches);
