use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use tmc_core::lattice::build_lattice;
use tmc_core::rng::RngStream;
use tmc_core::sampler::{params_from_temperature, sample_nishimori};
use tmc_core::tn::log_partition;

fn bench_contraction(c: &mut Criterion) {
    let mut group = c.benchmark_group("contract_logz");
    let params = params_from_temperature(0.951).unwrap();
    for size in [2i64, 3, 5, 10] {
        let g = build_lattice(size).unwrap();
        let x = sample_nishimori(&g, &params, &mut RngStream::new(1, 0).rng());
        group.bench_with_input(BenchmarkId::from_parameter(size), &x, |b, x| {
            b.iter(|| log_partition(&g, black_box(x), params.beta, 8).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_contraction);
criterion_main!(benches);
