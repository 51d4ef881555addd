use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;

use miqcr::instances::generate_kcluster;
use miqcr::pipeline::run_instance;
use miqcr::{build_base_relaxation, par, InstanceSpec, QpInstance, RunConfig};

fn catalog_violations(c: &mut Criterion) {
    let mut group = c.benchmark_group("catalog_violations");
    for n in [20usize, 40] {
        let relax = build_base_relaxation(&generate_kcluster(n, 0.5, n / 2, 1).unwrap()).unwrap();
        let x: Vec<f64> = (0..n).map(|i| 0.3 + 0.4 * (i % 2) as f64).collect();
        let z = relax.embed_point(&x).unwrap() + DMatrix::from_fn(n + 1, n + 1, |i, j| if i == j { 0.0 } else { 1e-3 });
        let catalog = relax.catalog();
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, _| {
            b.iter(|| par::map(catalog, |d| d.eval_lifted(&z)))
        });
        group.bench_with_input(BenchmarkId::new("chunked", n), &n, |b, _| {
            b.iter(|| par::map_chunked(catalog, 1024, |d| d.eval_lifted(&z)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, _| {
            b.iter(|| par::map_sequential(catalog, |d| d.eval_lifted(&z)))
        });
    }
    group.finish();
}

fn pipeline_batch(c: &mut Criterion) {
    let insts: Vec<QpInstance> = (0..8).map(|s| generate_kcluster(10, 0.5, 5, s).unwrap()).collect();
    let cfg = RunConfig::new(InstanceSpec::File { path: "<memory>".into() }, 0.5);
    let run = |i: &QpInstance| run_instance(i, &cfg).map(|a| a.report.optimum).ok();
    let mut group = c.benchmark_group("pipeline_batch");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| par::map(&insts, run)));
    group.bench_function("sequential", |b| b.iter(|| par::map_sequential(&insts, run)));
    group.finish();
}

criterion_group!(benches, catalog_violations, pipeline_batch);
criterion_main!(benches);
