use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sfnn_bench::linear_layer;
use sfnn_core::black_scholes::{price_greens_function, solve_barrier_bvp, BsConfig};
use sfnn_core::contagion::{default_scenario, solve_contagion};
use sfnn_core::fixed_point::iterate;
use sfnn_core::linalg::{solve_affine_fixed_point, spectral_radius};
use sfnn_core::FixedPointConfig;
use std::hint::black_box;

fn linear(c: &mut Criterion) {
    let mut group = c.benchmark_group("linear_fixed_point");
    for n in [64, 128, 256] {
        let (layer, g) = linear_layer(n);
        group.bench_with_input(BenchmarkId::new("picard", n), &n, |b, _| {
            b.iter(|| iterate(|y| layer.apply(y), &g, &FixedPointConfig::new(1e-12, 1000)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dense_solve", n), &n, |b, _| {
            b.iter(|| solve_affine_fixed_point(&layer.w, &layer.b).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("spectral_radius", n), &n, |b, _| {
            b.iter(|| spectral_radius(&layer.w, 1e-10, 10_000).unwrap())
        });
    }
    group.finish();
}

fn applications(c: &mut Criterion) {
    c.bench_function("greens_function_price", |b| {
        b.iter(|| price_greens_function(black_box(105.0), 100.0, 0.05, 0.2, 1.0).unwrap())
    });
    let bs = BsConfig::default();
    c.bench_function("barrier_bvp", |b| {
        b.iter(|| solve_barrier_bvp(&bs, &FixedPointConfig::new(1e-12, 500)).unwrap())
    });
    let net = default_scenario();
    c.bench_function("contagion_default", |b| {
        b.iter(|| solve_contagion(&net, &FixedPointConfig::new(1e-12, 500)).unwrap())
    });
}

criterion_group!(benches, linear, applications);
criterion_main!(benches);
