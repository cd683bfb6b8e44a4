use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use usct_bench::{edge_source, lens, texture};
use usct_core::metrics::ssim;
use usct_core::solver::CbsOperator;
use usct_core::spectral::{SpectralMultiplier, SpectralPlan};
use usct_core::{angular, CbsConfig, Complex64};

fn spectral_apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral_apply");
    for n in [128usize, 256, 512] {
        let grid = *lens(n).grid();
        let lap = SpectralMultiplier::laplacian(grid);
        let mut plan = SpectralPlan::new(grid);
        let prepared = plan.prepare(&lap);
        let mut data: Vec<Complex64> = (0..grid.len()).map(|i| Complex64::new((i % 17) as f64, 0.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| plan.apply(black_box(&mut data), &prepared))
        });
    }
    group.finish();
}

fn cbs_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("cbs_solve");
    group.sample_size(10);
    for n in [64usize, 128] {
        let map = lens(n);
        let src = edge_source(&map);
        let cfg = CbsConfig { pad_width: 20, ..Default::default() };
        let op = CbsOperator::new(&map, angular(4e5), &cfg).expect("operator");
        let mut plan = op.new_plan();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| op.solve_with(&mut plan, black_box(&src)).expect("solve"))
        });
    }
    group.finish();
}

fn ssim_bench(c: &mut Criterion) {
    let x = texture(256, 0.0);
    let y = texture(256, 0.4);
    c.bench_function("ssim_256", |b| b.iter(|| ssim(black_box(&x), black_box(&y)).expect("ssim")));
}

criterion_group!(benches, spectral_apply, cbs_solve, ssim_bench);
criterion_main!(benches);
