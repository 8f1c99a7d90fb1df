use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mednet_bench::{desk_model, random_tensor};
use mednet_core::federated::{aggregate, Contribution};
use mednet_core::harness::roc_auc;
use mednet_core::model::ParamSet;
use mednet_core::rng::Rng;
use mednet_core::tensor::ops::{
    batch_norm, conv2d, conv2d_backward, dense, depthwise_conv2d, depthwise_conv2d_backward, BatchNormState, ConvSpec,
    Padding,
};
use mednet_core::Tensor;

fn convolutions(c: &mut Criterion) {
    let x: Tensor<f32> = random_tensor(&[8, 32, 32, 16], 1);
    let std_spec = ConvSpec::standard(3, 1, Padding::Same, 16, 16);
    let std_k = random_tensor(&[3, 3, 16, 16], 2);
    let pw_spec = ConvSpec::pointwise(16, 96);
    let pw_k = random_tensor(&[1, 1, 16, 96], 3);
    let xd: Tensor<f32> = random_tensor(&[8, 32, 32, 96], 4);
    let dw_spec = ConvSpec::depthwise(3, 1, Padding::Same, 96);
    let dw_k = random_tensor(&[3, 3, 96, 1], 5);

    c.bench_function("conv3x3 8x32x32x16->16", |b| b.iter(|| conv2d(black_box(&x), &std_spec, &std_k, None).unwrap()));
    c.bench_function("pointwise 8x32x32x16->96", |b| b.iter(|| conv2d(black_box(&x), &pw_spec, &pw_k, None).unwrap()));
    c.bench_function("depthwise3x3 8x32x32x96", |b| {
        b.iter(|| depthwise_conv2d(black_box(&xd), &dw_spec, &dw_k, None).unwrap())
    });

    let gy = random_tensor(&[8, 32, 32, 16], 6);
    c.bench_function("conv3x3 backward", |b| {
        b.iter(|| conv2d_backward(black_box(&x), &std_spec, &std_k, false, &gy, true).unwrap())
    });
    let gyd = random_tensor(&[8, 32, 32, 96], 7);
    c.bench_function("depthwise3x3 backward", |b| {
        b.iter(|| depthwise_conv2d_backward(black_box(&xd), &dw_spec, &dw_k, false, &gyd, true).unwrap())
    });
}

fn dense_and_norm(c: &mut Criterion) {
    let x: Tensor<f32> = random_tensor(&[32, 1280], 8);
    let w = random_tensor(&[1280, 64], 9);
    let bias = random_tensor(&[64], 10);
    c.bench_function("dense 32x1280->64", |b| b.iter(|| dense(black_box(&x), &w, &bias).unwrap()));

    let xb: Tensor<f32> = random_tensor(&[32, 16, 16, 96], 11);
    let state = BatchNormState::new(96);
    c.bench_function("batch_norm train 32x16x16x96", |b| b.iter(|| batch_norm(black_box(&xb), &state, true).unwrap()));
}

fn federated_and_metrics(c: &mut Criterion) {
    let clients: Vec<ParamSet<f32>> = (0..4).map(|s| desk_model::<f32>(s).1).collect();
    let contribs: Vec<Contribution<f32>> =
        clients.iter().enumerate().map(|(i, w)| Contribution { client_id: i, weights: w, n_k: 100 + i }).collect();
    c.bench_function("aggregate 4 desk models", |b| b.iter(|| aggregate(black_box(&contribs)).unwrap()));

    let mut r = Rng::new(12);
    let scores: Vec<f64> = (0..10_000).map(|_| r.next_f64()).collect();
    let positive: Vec<bool> = (0..10_000).map(|_| r.next_f64() < 0.3).collect();
    c.bench_function("roc_auc 10k", |b| b.iter(|| roc_auc(black_box(&scores), &positive).unwrap()));
}

criterion_group!(benches, convolutions, dense_and_norm, federated_and_metrics);
criterion_main!(benches);
