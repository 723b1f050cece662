use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use seqlab_core::klinf::maximize_log_dual;
use seqlab_core::{klinf_bounded, klinf_tilde, DiscreteBoundedDist};

fn spread_dist(atoms: usize) -> DiscreteBoundedDist {
    let xs: Vec<f64> = (0..atoms).map(|i| i as f64 / (atoms - 1) as f64).collect();
    let raw: Vec<f64> = (0..atoms).map(|i| 1.0 + (i % 3) as f64).collect();
    let total: f64 = raw.iter().sum();
    DiscreteBoundedDist::new(xs, raw.iter().map(|w| w / total).collect()).unwrap()
}

fn klinf_solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("klinf");
    for atoms in [2usize, 4, 16, 256] {
        let p = spread_dist(atoms);
        group.bench_with_input(BenchmarkId::new("full", atoms), &p, |b, p| {
            b.iter(|| klinf_bounded(black_box(p), 0.7).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("tilde", atoms), &p, |b, p| {
            b.iter(|| klinf_tilde(black_box(p), 0.7).unwrap())
        });
    }
    group.finish();
}

fn warm_start(c: &mut Criterion) {
    let a: Vec<f64> = (0..64).map(|i| 0.6 - i as f64 / 63.0).collect();
    let w = vec![1.0; 64];
    let cold = maximize_log_dual(&a, &w, -1.0, 1.0, None);
    c.bench_function("dual/cold", |b| b.iter(|| maximize_log_dual(black_box(&a), &w, -1.0, 1.0, None)));
    c.bench_function("dual/warm", |b| {
        b.iter(|| maximize_log_dual(black_box(&a), &w, -1.0, 1.0, Some(cold.lambda_star)))
    });
}

criterion_group!(benches, klinf_solvers, warm_start);
criterion_main!(benches);
