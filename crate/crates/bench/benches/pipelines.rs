use cavitylab::metrics::{hd95, overlap_metrics};
use cavitylab::msssim::{evaluate, prepare_reference, SsimParams};
use cavitylab::multiscale::{build_pyramid, convolve_separable, gaussian_kernel};
use cavitylab::optim::{adam_step, AdamState};
use cavitylab::phantom::{generate_phantom, PhantomSpec};
use cavitylab::tdist::{tdist_grad, tdist_nll, Residual, TDistParams, TdistMode};
use cavitylab::volume::hadamard;
use cavitylab_bench::normalized_pair;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn bench_phantom(c: &mut Criterion) {
    c.bench_function("generate_phantom 32^3", |b| {
        b.iter(|| generate_phantom(black_box(&PhantomSpec::with_seed(3))).unwrap())
    });
}

fn bench_multiscale(c: &mut Criterion) {
    let (_, pre, _) = normalized_pair(1);
    let kernel = gaussian_kernel(1.5, 5).unwrap();
    c.bench_function("convolve_separable 32^3 r5", |b| {
        b.iter(|| convolve_separable(black_box(&pre), &kernel))
    });
    c.bench_function("build_pyramid 32^3", |b| {
        b.iter(|| build_pyramid(black_box(&pre), 5, 11).unwrap())
    });
}

fn bench_msssim(c: &mut Criterion) {
    let (_, pre, post) = normalized_pair(2);
    let params = SsimParams::default_five();
    let reference = prepare_reference(&post, &params).unwrap();
    let x = hadamard(&pre, &pre).unwrap();
    c.bench_function("msssim loss 32^3", |b| {
        b.iter(|| evaluate(black_box(&x), &reference, &params, false).unwrap())
    });
    c.bench_function("msssim loss+grad 32^3", |b| {
        b.iter(|| evaluate(black_box(&x), &reference, &params, true).unwrap())
    });
}

fn bench_tdist(c: &mut Criterion) {
    let (pair, pre, _) = normalized_pair(4);
    let res = Residual::from_label_pred(&pair.gt_mask, &pre).unwrap();
    let p = TDistParams::init_unit(TdistMode::PerVoxel);
    c.bench_function("tdist nll 32^3", |b| {
        b.iter(|| tdist_nll(black_box(&res), &p).unwrap())
    });
    c.bench_function("tdist grad 32^3", |b| {
        b.iter(|| tdist_grad(black_box(&res), &p).unwrap())
    });
}

fn bench_metrics(c: &mut Criterion) {
    let (pair, _, _) = normalized_pair(5);
    let other = generate_phantom(&PhantomSpec::with_seed(6)).unwrap();
    c.bench_function("overlap_metrics 32^3", |b| {
        b.iter(|| overlap_metrics(black_box(&pair.gt_mask), &other.gt_mask).unwrap())
    });
    c.bench_function("hd95 32^3", |b| {
        b.iter(|| hd95(black_box(&pair.gt_mask), &other.gt_mask, [1.0; 3]).unwrap())
    });
}

fn bench_adam(c: &mut Criterion) {
    let n = 32 * 32 * 32;
    c.bench_function("adam_step 32^3", |b| {
        let mut params = vec![0.5; n];
        let grads = vec![1e-3; n];
        let mut state = AdamState::new(n);
        b.iter(|| adam_step(&mut params, black_box(&grads), &mut state, 1e-3).unwrap())
    });
}

criterion_group!(
    benches,
    bench_phantom,
    bench_multiscale,
    bench_msssim,
    bench_tdist,
    bench_metrics,
    bench_adam
);
criterion_main!(benches);
