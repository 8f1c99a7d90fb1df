use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mednet_bench::{desk_batch, desk_model};
use mednet_core::harness::predict;
use mednet_core::model::Mode;
use mednet_core::optim::{ModelObjective, OptimizerConfig};

fn model_passes(c: &mut Criterion) {
    let (graph, params) = desk_model::<f32>(1);
    let (x, y) = desk_batch::<f32>(32, 2);
    c.bench_function("desk forward eval batch 32", |b| {
        b.iter(|| graph.forward(&params, black_box(&x), Mode::Eval).unwrap())
    });
    c.bench_function("desk loss+grad batch 32 f32", |b| {
        b.iter(|| graph.loss_and_grad(&params, black_box(&x), &y, 3).unwrap())
    });

    let (graph64, params64) = desk_model::<f64>(1);
    let (x64, y64) = desk_batch::<f64>(32, 2);
    c.bench_function("desk loss+grad batch 32 f64", |b| {
        b.iter(|| graph64.loss_and_grad(&params64, black_box(&x64), &y64, 3).unwrap())
    });
}

fn optimizer_steps(c: &mut Criterion) {
    let (graph, params) = desk_model::<f32>(1);
    let (x, y) = desk_batch::<f32>(128, 4);
    let objective = ModelObjective::new(&graph, &x, &y).unwrap();
    let batch: Vec<usize> = (0..32).collect();
    for cfg in [OptimizerConfig::sgd(0.1), OptimizerConfig::adam(0.001)] {
        let name = format!("desk {:?} step batch 32", cfg.kind).to_lowercase();
        c.bench_function(&name, |b| {
            let mut opt = cfg.build::<f32>().unwrap();
            let mut w = params.clone();
            b.iter(|| opt.step(&objective, &mut w, black_box(&batch), 5).unwrap())
        });
    }
    c.bench_function("desk predict 128", |b| b.iter(|| predict(&graph, &params, black_box(&x)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = model_passes, optimizer_steps
}
criterion_main!(benches);
