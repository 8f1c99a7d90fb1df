//! Finite-difference sweep over every differentiable primitive.
//!
//! Each op is reduced to the scalar `sum(w * op(x))` with random `w`, so the
//! upstream gradient fed to the backward pass is `w` itself. Shapes, kernel
//! sizes, strides and padding are drawn per case from a seeded stream.

use serde::Serialize;

use super::gradcheck::{check_gradient, GradCheckReport};
use super::ops::*;
use super::Tensor;
use crate::rng::Rng;

/// Aggregated result for one op (all its inputs, all cases).
#[derive(Debug, Clone, Serialize)]
pub struct OpCheck {
    pub op: &'static str,
    pub cases: u64,
    pub report: GradCheckReport,
}

fn rand_tensor(r: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.uniform(-1.0, 1.0)).collect()).expect("sized")
}

fn pick(r: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + r.below((hi - lo + 1) as u64) as usize
}

fn weighted(out: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn check(
    point: &Tensor<f64>,
    analytic: &Tensor<f64>,
    w: &Tensor<f64>,
    tol: f64,
    forward: impl Fn(&Tensor<f64>) -> Tensor<f64>,
) -> GradCheckReport {
    let shape = point.shape().to_vec();
    check_gradient(
        |v| weighted(&forward(&Tensor::new(shape.clone(), v.to_vec()).expect("sized")), w),
        point.data(),
        analytic.data(),
        None,
        tol,
    )
}

fn random_conv(r: &mut Rng, depthwise: bool) -> (ConvSpec, Vec<usize>) {
    let k = [1, 3, 5][pick(r, 0, 2)];
    let stride = pick(r, 1, 2);
    let padding = if pick(r, 0, 1) == 0 { Padding::Same } else { Padding::Valid };
    let h = pick(r, k, k + 4);
    let w = pick(r, k, k + 4);
    let cin = pick(r, 1, 3);
    let spec = if depthwise {
        let mut s = ConvSpec::depthwise(k, stride, padding, cin);
        let m = pick(r, 1, 2);
        s.mode = ConvMode::Depthwise { multiplier: m };
        s.out_channels = cin * m;
        s
    } else {
        ConvSpec::standard(k, stride, padding, cin, pick(r, 1, 3))
    };
    (spec, vec![pick(r, 1, 2), h, w, cin])
}

fn conv_case(r: &mut Rng, depthwise: bool, tol: f64) -> GradCheckReport {
    let (spec, xs) = random_conv(r, depthwise);
    let x = rand_tensor(r, &xs);
    let kernel = rand_tensor(r, &spec.kernel_shape());
    let bias = rand_tensor(r, &[spec.out_channels]);
    let run = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| {
        if depthwise {
            depthwise_conv2d(x, &spec, k, Some(b)).expect("valid conv")
        } else {
            conv2d(x, &spec, k, Some(b)).expect("valid conv")
        }
    };
    let out = run(&x, &kernel, &bias);
    let w = rand_tensor(r, out.shape());
    let g = if depthwise {
        depthwise_conv2d_backward(&x, &spec, &kernel, true, &w, true)
    } else {
        conv2d_backward(&x, &spec, &kernel, true, &w, true)
    }
    .expect("valid conv");
    check(&x, g.input.as_ref().expect("requested"), &w, tol, |v| run(v, &kernel, &bias))
        .merge(check(&kernel, &g.kernel, &w, tol, |v| run(&x, v, &bias)))
        .merge(check(&bias, g.bias.as_ref().expect("requested"), &w, tol, |v| run(&x, &kernel, v)))
}

fn dense_case(r: &mut Rng, tol: f64) -> GradCheckReport {
    let (b, di, dout) = (pick(r, 1, 4), pick(r, 1, 6), pick(r, 1, 5));
    let x = rand_tensor(r, &[b, di]);
    let wt = rand_tensor(r, &[di, dout]);
    let bias = rand_tensor(r, &[dout]);
    let w = rand_tensor(r, &[b, dout]);
    let g = dense_backward(&x, &wt, &w).expect("valid dense");
    let run = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>| dense(x, wt, b).expect("valid dense");
    check(&x, &g.input, &w, tol, |v| run(v, &wt, &bias))
        .merge(check(&wt, &g.weight, &w, tol, |v| run(&x, v, &bias)))
        .merge(check(&bias, &g.bias, &w, tol, |v| run(&x, &wt, v)))
}

fn batch_norm_case(r: &mut Rng, case: u64, tol: f64) -> GradCheckReport {
    let training = case.is_multiple_of(2);
    let c = pick(r, 1, 4);
    let shape = if case % 4 < 2 { vec![pick(r, 2, 5), c] } else { vec![pick(r, 1, 3), 2, 2, c] };
    let x = rand_tensor(r, &shape);
    let mut st = BatchNormState::<f64>::new(c);
    st.gamma = rand_tensor(r, &[c]);
    st.beta = rand_tensor(r, &[c]);
    st.running_mean = rand_tensor(r, &[c]);
    st.running_var = rand_tensor(r, &[c]).map(|v| v.abs() + 0.5);
    let (out, cache, _) = batch_norm(&x, &st, training).expect("valid bn");
    let w = rand_tensor(r, out.shape());
    let g = batch_norm_backward(&cache, &st.gamma, &w).expect("valid bn");
    let run = |x: &Tensor<f64>, gamma: &Tensor<f64>, beta: &Tensor<f64>| {
        let mut s = st.clone();
        s.gamma = gamma.clone();
        s.beta = beta.clone();
        batch_norm(x, &s, training).expect("valid bn").0
    };
    check(&x, &g.input, &w, tol, |v| run(v, &st.gamma, &st.beta))
        .merge(check(&st.gamma, &g.gamma, &w, tol, |v| run(&x, v, &st.beta)))
        .merge(check(&st.beta, &g.beta, &w, tol, |v| run(&x, &st.gamma, v)))
}

fn spatial_shape(r: &mut Rng) -> Vec<usize> {
    vec![pick(r, 1, 3), pick(r, 1, 4), pick(r, 1, 4), pick(r, 1, 3)]
}

fn relu_case(r: &mut Rng, tol: f64) -> GradCheckReport {
    // keep inputs at least 0.05 away from the kink
    let shape = spatial_shape(r);
    let x = rand_tensor(r, &shape).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let w = rand_tensor(r, x.shape());
    let g = relu_backward(&x, &w).expect("same shape");
    check(&x, &g, &w, tol, relu)
}

fn pool_case(r: &mut Rng, max: bool, tol: f64) -> GradCheckReport {
    let shape = spatial_shape(r);
    let x = rand_tensor(r, &shape);
    let w = rand_tensor(r, &[shape[0], shape[3]]);
    if max {
        let (_, idx) = global_max_pool(&x).expect("spatial");
        let g = global_max_pool_backward(&shape, &idx, &w).expect("spatial");
        check(&x, &g, &w, tol, |v| global_max_pool(v).expect("spatial").0)
    } else {
        let g = global_avg_pool_backward(&shape, &w).expect("spatial");
        check(&x, &g, &w, tol, |v| global_avg_pool(v).expect("spatial"))
    }
}

fn dropout_case(r: &mut Rng, case: u64, tol: f64) -> GradCheckReport {
    let shape = spatial_shape(r);
    let x = rand_tensor(r, &shape);
    let spec = DropoutSpec { p: 0.4, training: true, seed: case };
    let (out, mask) = dropout(&x, &spec).expect("valid p");
    let w = rand_tensor(r, out.shape());
    let g = dropout_backward(&mask, &w).expect("same shape");
    check(&x, &g, &w, tol, |v| dropout(v, &spec).expect("valid p").0)
}

fn softmax_case(r: &mut Rng, tol: f64) -> GradCheckReport {
    let (b, d) = (pick(r, 1, 4), pick(r, 1, 6));
    let x = rand_tensor(r, &[b, d]).scale(3.0);
    let w = rand_tensor(r, &[b, d]);
    let g = softmax_backward(&softmax(&x).expect("finite"), &w).expect("same shape");
    check(&x, &g, &w, tol, |v| softmax(v).expect("finite"))
}

fn concat_case(r: &mut Rng, tol: f64) -> GradCheckReport {
    let (b, d, e) = (pick(r, 1, 4), pick(r, 1, 6), pick(r, 1, 6));
    let x = rand_tensor(r, &[b, d]);
    let y = rand_tensor(r, &[b, e]);
    let w = rand_tensor(r, &[b, d + e]);
    let (ga, gb) = concat_backward(d, &w).expect("width fits");
    check(&x, &ga, &w, tol, |v| concat(v, &y).expect("same batch"))
        .merge(check(&y, &gb, &w, tol, |v| concat(&x, v).expect("same batch")))
}

fn add_case(r: &mut Rng, tol: f64) -> GradCheckReport {
    let shape = spatial_shape(r);
    let (x, y) = (rand_tensor(r, &shape), rand_tensor(r, &shape));
    let w = rand_tensor(r, &shape);
    check(&x, &w, &w, tol, |v| add(v, &y).expect("same shape"))
}

/// Names of the ops covered by [`check_ops`], in report order.
pub const OPS: [&str; 11] = [
    "conv2d",
    "depthwise_conv2d",
    "dense",
    "batch_norm",
    "relu",
    "global_avg_pool",
    "global_max_pool",
    "dropout",
    "softmax",
    "concat",
    "add",
];

/// Run `cases` random cases per op at 64-bit precision.
pub fn check_ops(cases: u64, seed: u64, tol: f64) -> Vec<OpCheck> {
    OPS.iter()
        .map(|&op| {
            let mut report = GradCheckReport::empty(tol);
            for case in 0..cases {
                let r = &mut Rng::derived(seed, op, case);
                let one = match op {
                    "conv2d" => conv_case(r, false, tol),
                    "depthwise_conv2d" => conv_case(r, true, tol),
                    "dense" => dense_case(r, tol),
                    "batch_norm" => batch_norm_case(r, case, tol),
                    "relu" => relu_case(r, tol),
                    "global_avg_pool" => pool_case(r, false, tol),
                    "global_max_pool" => pool_case(r, true, tol),
                    "dropout" => dropout_case(r, case, tol),
                    "softmax" => softmax_case(r, tol),
                    "concat" => concat_case(r, tol),
                    "add" => add_case(r, tol),
                    _ => unreachable!(),
                };
                report = report.merge(one);
            }
            OpCheck { op, cases, report }
        })
        .collect()
}
