use benchsim_bench::{density_grid, stylized};
use benchsim_core::liesym::{joint_kernel_mu, joint_laplace};
use benchsim_core::mlmc::{level_statistics, MlmcConfig, VolPayoff};
use benchsim_core::pricing::{price_vol_put, real_world_price, McConfig, Model, Monitoring, PayoffKind, PayoffSpec, VolMethod};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn transforms(c: &mut Criterion) {
    c.bench_function("joint laplace", |b| b.iter(|| joint_laplace(20.0, 1.0, black_box(0.3), black_box(50.0), 0.05).unwrap()));
    c.bench_function("joint kernel mu=0", |b| b.iter(|| joint_kernel_mu(20.0, 1.0, black_box(18.0), 0.0, 0.05).unwrap()));
}

fn pricing(c: &mut Criterion) {
    let mut g = c.benchmark_group("pricing");
    g.sample_size(10);
    g.bench_function("density inversion 41x41", |b| b.iter(|| density_grid(black_box(41))));
    let grid = density_grid(61);
    let p = stylized();
    g.bench_function("vol put quadrature", |b| b.iter(|| price_vol_put(&p, black_box(0.2), 1.0, VolMethod::Quadrature(&grid)).unwrap()));
    let spec = PayoffSpec { kind: PayoffKind::EuPutOnIndex, strike: 1.0, maturity: 5.0, monitoring: Monitoring::Terminal };
    let mc = McConfig { n_paths: 10_000, seed: 3, ..McConfig::default() };
    g.bench_function("index put mc 1e4", |b| b.iter(|| real_world_price(&Model::Mmm(p), black_box(&spec), &mc).unwrap()));
    let cfg = MlmcConfig::default();
    g.bench_function("mlmc level 4, 1e3 samples", |b| b.iter(|| level_statistics(&p, &VolPayoff::put(0.22, 1.0), &cfg, black_box(4), 1000, 4)));
    g.finish();
}

criterion_group!(benches, transforms, pricing);
criterion_main!(benches);
