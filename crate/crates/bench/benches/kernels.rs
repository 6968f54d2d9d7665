use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fdelay_bench::{driver, unit_grid, weighted_problem};
use fdelay_core::delay::{solve_delay, SolveOptions};
use fdelay_core::fbm::{build_kstar, FbmSampler, HurstParams, SamplingMethod};
use fdelay_core::sensitivity::solve_field;
use fdelay_core::young::young_integrate;
use std::hint::black_box;

fn fbm_sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("fbm_sample");
    for (n, method) in [
        (256, SamplingMethod::Cholesky),
        (1024, SamplingMethod::Cholesky),
        (4096, SamplingMethod::Circulant),
    ] {
        let s = FbmSampler::new(unit_grid(n), 0.75, method).unwrap();
        group.bench_with_input(BenchmarkId::new(format!("{method:?}"), n), &n, |b, _| {
            let mut p = 0;
            b.iter(|| {
                p += 1;
                black_box(s.sample_path(1, 7, p))
            })
        });
    }
    group.finish();
}

fn young(c: &mut Criterion) {
    let f = driver(4096, 1);
    let g = driver(4096, 2);
    c.bench_function("young_integrate_4096", |b| {
        b.iter(|| black_box(young_integrate(&f, &g, 0.7, 0.7).unwrap()))
    });
}

fn solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_delay");
    for n in [256, 1024] {
        let p = weighted_problem(n, 3);
        let opts = SolveOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(solve_delay(&p.x, &p.xi, &p.sigma, &p.kernel, &opts).unwrap()))
        });
    }
    group.finish();
}

fn sensitivity_field(c: &mut Criterion) {
    let p = weighted_problem(256, 4);
    let rep = solve_delay(&p.x, &p.xi, &p.sigma, &p.kernel, &SolveOptions::default()).unwrap();
    c.bench_function("solve_field_256_stride4", |b| {
        b.iter(|| black_box(solve_field(&rep, &p.x, &p.sigma, &p.kernel, 4).unwrap()))
    });
}

fn kstar(c: &mut Criterion) {
    let h = HurstParams::new(0.75).unwrap();
    let mut group = c.benchmark_group("build_kstar");
    group.sample_size(10);
    for n in [64, 256] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| black_box(build_kstar(unit_grid(n), &h).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, fbm_sampling, young, solver, sensitivity_field, kstar);
criterion_main!(benches);
