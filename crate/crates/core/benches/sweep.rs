use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use k06_core::adversary::SiphonAmount;
use k06_core::analysis::{evaluate_cell, leakage_vs_n, Scenario};
use k06_core::Exec;

fn executors() -> Vec<(&'static str, Exec)> {
    vec![
        ("sequential", Exec::Sequential),
        #[cfg(feature = "parallel")]
        ("parallel", Exec::Parallel),
    ]
}

fn tradeoff_cell(c: &mut Criterion) {
    let sc = Scenario::new(1000.0, 5.0).bits(32);
    let mut g = c.benchmark_group("tradeoff_cell");
    g.sample_size(20);
    for (name, exec) in executors() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate_cell(&sc, SiphonAmount::Count(64), 256, 1, exec).unwrap())
        });
    }
    g.finish();
}

fn leakage(c: &mut Criterion) {
    let mut g = c.benchmark_group("leakage_vs_n");
    g.sample_size(20);
    for (name, exec) in executors() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| leakage_vs_n(&[100, 1_000, 10_000], 2_000, 1, exec))
        });
    }
    g.finish();
}

criterion_group!(benches, tradeoff_cell, leakage);
criterion_main!(benches);
