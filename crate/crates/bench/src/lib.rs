//! Shared fixtures for the criterion benches.

use mednet_core::data::{generate_synthetic, SyntheticSpec};
use mednet_core::model::{build_variant, init_params, BackboneSpec, ModelGraph, ParamSet, Variant};
use mednet_core::rng::Rng;
use mednet_core::{Scalar, Tensor};

/// Uniform `[-1, 1)` tensor drawn from `seed`.
pub fn random_tensor<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut r = Rng::new(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| r.uniform(-1.0, 1.0)).collect();
    Tensor::from_f64(shape, &v).expect("sized")
}

/// DeepMediX at width 0.25 on 32x32x3 inputs, two classes.
pub fn desk_model<T: Scalar>(seed: u64) -> (ModelGraph, ParamSet<T>) {
    let graph = build_variant(Variant::DeepMediX, &BackboneSpec::with_width(0.25, [32, 32, 3]), 2).expect("desk model");
    let params = init_params(&graph, seed);
    (graph, params)
}

/// `n` synthetic 32x32 blob images with labels.
pub fn desk_batch<T: Scalar>(n: usize, seed: u64) -> (Tensor<T>, Vec<usize>) {
    generate_synthetic(&SyntheticSpec::new(n, 2, seed)).expect("synthetic batch")
}
