use std::hint::black_box;

use anynoise_bench::{dataset, field, network, pixel_process, smooth_field_process};
use anynoise_core::{
    analytic_dirac_denoiser, make_time_grid, sample_euler, ConstantOracle, GridScheme, Rng,
};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn basis(c: &mut Criterion) {
    c.bench_function("legendre_trig_basis 3x5 16x16", |b| {
        b.iter(|| anynoise_core::legendre_trig_basis(black_box(3), black_box(5), [16, 16]).unwrap())
    });
    let p = smooth_field_process();
    let basis = p.basis().resolve(None).unwrap();
    let v = field(0);
    c.bench_function("apply_covariance 162x256", |b| {
        b.iter(|| basis.apply_covariance(black_box(&v)).unwrap())
    });
}

fn flow(c: &mut Criterion) {
    let pixel = pixel_process();
    let ds = dataset(64, 1);
    let den = analytic_dirac_denoiser(&ds, &pixel).unwrap();
    let x = field(2);
    c.bench_function("pfode_rhs analytic 64 points", |b| {
        b.iter(|| {
            pixel
                .pfode_rhs(&den, black_box(40.0), black_box(&x))
                .unwrap()
        })
    });
    let p = smooth_field_process();
    let oracle = ConstantOracle::new(field(3));
    let grid = make_time_grid(100.0, 100, GridScheme::Uniform).unwrap();
    c.bench_function("sample_euler 100 steps constant oracle", |b| {
        b.iter(|| sample_euler(&p, &oracle, black_box(&x), &grid).unwrap())
    });
    let x0 = field(4);
    c.bench_function("simulate_sde 64 steps", |b| {
        b.iter_batched(
            || Rng::new(5, 0),
            |mut rng| p.simulate_sde(&x0, 64, None, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn net(c: &mut Criterion) {
    let net = network(256);
    let input: Vec<f64> = field(6).data().iter().copied().chain([0.5]).collect();
    c.bench_function("network forward w256", |b| {
        b.iter(|| net.forward(black_box(&input)).unwrap())
    });
    let cache = net.forward_cached(&input).unwrap();
    let grad_out = vec![1e-3; 256];
    c.bench_function("network backward w256", |b| {
        b.iter(|| {
            let mut grad = vec![0.0; net.param_count()];
            net.backward(&cache, black_box(&grad_out), &mut grad)
        })
    });
    let rows = 32;
    let batch: Vec<f64> = (0..rows).flat_map(|_| input.iter().copied()).collect();
    c.bench_function("network forward+backward batch 32 w256", |b| {
        b.iter(|| {
            let cache = net.forward_batch(black_box(&batch), rows).unwrap();
            let g = vec![1e-3; rows * 256];
            let mut grad = vec![0.0; net.param_count()];
            net.backward_batch(&cache, &g, &mut grad);
            grad
        })
    });
}

criterion_group!(benches, basis, flow, net);
criterion_main!(benches);
