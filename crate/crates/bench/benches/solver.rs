use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use migflow_bench::lattice_tensor;
use migflow_core::solver::{fit, init_factors, mode_update, FitConfig, Mode, Prior};

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    for &(n, m) in &[(20usize, 24usize), (60, 48), (120, 60)] {
        let tensor = lattice_tensor(n, m, 0.05);
        let config = FitConfig {
            rank: 8,
            ..FitConfig::default()
        };
        let start = init_factors(tensor.dims(), &config);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{n}x{m}")), &tensor, |b, t| {
            b.iter_batched_ref(
                || start.clone(),
                |model| {
                    for mode in Mode::ALL {
                        mode_update(t, model, mode, Prior::FLAT).unwrap();
                    }
                },
                criterion::BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn full_fit(c: &mut Criterion) {
    let tensor = lattice_tensor(40, 36, 0.05);
    let config = FitConfig {
        rank: 6,
        max_iters: 100,
        restarts: 4,
        ..FitConfig::default()
    };
    c.bench_function("fit/40x40x36/k6x4", |b| b.iter(|| fit(&tensor, &config).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = sweep, full_fit
}
criterion_main!(benches);
