use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use kkl_bench::{lorenz_points, lorenz_snapshots};
use kkl_core::kernels::gram_symmetric;
use kkl_core::observer::truncated_injection;
use kkl_core::regression::krr_fit;
use kkl_core::spectral::{build_snapshot_matrices, candidate_grid, ReducedProblem};
use kkl_core::{DeepKklParams, RadialKernel};

fn gram(c: &mut Criterion) {
    let kernel = RadialKernel::wendland(3, 1, 10.0).unwrap();
    let mut group = c.benchmark_group("gram");
    for n in [250, 1000] {
        let pts = lorenz_points(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &pts, |b, pts| {
            b.iter(|| gram_symmetric(&kernel, black_box(pts)).unwrap())
        });
    }
    group.finish();
}

fn krr(c: &mut Criterion) {
    let pts = lorenz_points(1000);
    let kernel = RadialKernel::gaussian(10.0).unwrap();
    c.bench_function("krr_fit/1000", |b| b.iter(|| krr_fit(black_box(&pts), &pts, &kernel, 1e-4).unwrap()));
}

fn candidate_solve(c: &mut Criterion) {
    let snaps = lorenz_snapshots(1000);
    let matrices = build_snapshot_matrices(&snaps, &RadialKernel::wendland(3, 1, 10.0).unwrap()).unwrap();
    let lambda = candidate_grid(800).unwrap().lambdas()[100];
    let mut group = c.benchmark_group("solve_candidate");
    group.sample_size(10);
    for rank in [200, 400] {
        let problem = ReducedProblem::new(&matrices, matrices.default_eps_g(), Some(rank)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(rank), &problem, |b, p| {
            b.iter(|| p.solve(black_box(lambda)).unwrap())
        });
    }
    group.finish();
}

fn injection(c: &mut Criterion) {
    let params = DeepKklParams::new(3, 0.9, 50).unwrap();
    let history: Vec<f64> = (0..50).map(|i| (0.1 * i as f64).sin()).collect();
    c.bench_function("truncated_injection/ell=50", |b| {
        b.iter(|| truncated_injection(black_box(&history), &params).unwrap())
    });
}

criterion_group!(benches, gram, krr, candidate_solve, injection);
criterion_main!(benches);
