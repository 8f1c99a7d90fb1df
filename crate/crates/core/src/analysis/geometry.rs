use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GradSeed, Mode, ModelGraph, ParamSet};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Jacobian of the eval-mode output with respect to the flattened input
/// `x` (one sample, shaped like the graph input). Row `i` is the gradient
/// of output `i`, from one backward pass per output.
pub fn jacobian<T: Scalar>(graph: &ModelGraph, params: &ParamSet<T>, x: &Tensor<T>) -> Result<DMatrix<f64>> {
    if x.shape() != graph.input_shape() {
        return Err(Error::shape("jacobian", format!("input {:?}, model expects {:?}", x.shape(), graph.input_shape())));
    }
    let mut batch_shape = vec![1];
    batch_shape.extend_from_slice(x.shape());
    let batch = x.clone().reshape(&batch_shape)?;
    let trace = graph.forward_trace(params, &batch, Mode::Eval)?;
    let out_shape = trace.output().shape().to_vec();
    let k = trace.output().len();
    let n = x.len();
    let rows = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut seed = Tensor::zeros(&out_shape);
            seed.data_mut()[i] = T::one();
            let g = graph.backward(params, &trace, GradSeed::Output(seed), true)?;
            let row = g.input.map(|t| t.to_f64_vec()).unwrap_or_else(|| vec![0.0; n]);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("jacobian row {i}")));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(k, n, |i, j| rows[i][j]))
}

/// `G = J^T J` at a base point.
#[derive(Debug, Clone, PartialEq)]
pub struct PullbackMetric {
    pub point: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub metric: DMatrix<f64>,
}

/// `J^T J`, each entry summed over outputs in order. The result is exactly
/// symmetric.
pub fn gram(j: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.ncols();
    let mut g = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let mut s = 0.0;
            for i in 0..j.nrows() {
                s += j[(i, a)] * j[(i, b)];
            }
            g[(a, b)] = s;
            g[(b, a)] = s;
        }
    }
    g
}

pub fn pullback_metric<T: Scalar>(graph: &ModelGraph, params: &ParamSet<T>, x: &Tensor<T>) -> Result<PullbackMetric> {
    let jacobian = jacobian(graph, params, x)?;
    Ok(PullbackMetric { point: x.to_f64_vec(), metric: gram(&jacobian), jacobian })
}

/// `u^T G v`.
pub fn metric_form(g: &DMatrix<f64>, u: &[f64], v: &[f64]) -> Result<f64> {
    let n = g.nrows();
    if g.ncols() != n || u.len() != n || v.len() != n {
        return Err(Error::shape(
            "metric_form",
            format!("G is {}x{}, u has {}, v has {}", g.nrows(), g.ncols(), u.len(), v.len()),
        ));
    }
    let gv = g * DVector::from_column_slice(v);
    Ok(u.iter().zip(gv.iter()).map(|(a, b)| a * b).sum())
}

pub const POWER_TOLERANCE: f64 = 1e-8;
pub const POWER_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest `count` eigenvalues of a symmetric PSD matrix by power iteration
/// with deflation. Iteration stops when successive Rayleigh quotients agree
/// to `tolerance` relative to the eigenvalue scale.
pub fn top_eigenpairs(g: &DMatrix<f64>, count: usize, seed: u64, tolerance: f64, max_iters: usize) -> Result<Vec<Eigenpair>> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::shape("top_eigenpairs", format!("{}x{} is not square", n, g.ncols())));
    }
    let mut found: Vec<Eigenpair> = Vec::new();
    let mut rng = Rng::derived(seed, "power_iteration", 0);
    for _ in 0..count.min(n) {
        let mut v = DVector::from_fn(n, |_, _| rng.normal());
        let project = |v: &mut DVector<f64>, found: &[Eigenpair]| {
            for p in found {
                let q = DVector::from_column_slice(&p.vector);
                let c = q.dot(v);
                *v -= c * q;
            }
        };
        project(&mut v, &found);
        let norm = v.norm();
        if norm == 0.0 {
            break;
        }
        v /= norm;
        let mut lambda = v.dot(&(g * &v));
        let mut converged = false;
        let mut iterations = 0;
        while iterations < max_iters {
            iterations += 1;
            let mut w = g * &v;
            project(&mut w, &found);
            let norm = w.norm();
            if norm == 0.0 {
                lambda = 0.0;
                converged = true;
                break;
            }
            v = w / norm;
            let next = v.dot(&(g * &v));
            let done = (next - lambda).abs() <= tolerance * next.abs().max(1.0);
            lambda = next;
            if done {
                converged = true;
                break;
            }
        }
        found.push(Eigenpair { value: lambda, vector: v.iter().copied().collect(), iterations, converged });
    }
    Ok(found)
}

/// Eigenvalue summary of the metric at one point, for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub dim: usize,
    pub outputs: usize,
    pub trace: f64,
    pub eigenvalues: Vec<f64>,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
}

impl PullbackMetric {
    pub fn spectrum(&self, count: usize, seed: u64) -> Result<Spectrum> {
        let pairs = top_eigenpairs(&self.metric, count, seed, POWER_TOLERANCE, POWER_MAX_ITERS)?;
        Ok(Spectrum {
            dim: self.metric.nrows(),
            outputs: self.jacobian.nrows(),
            trace: self.metric.trace(),
            eigenvalues: pairs.iter().map(|p| p.value).collect(),
            converged: pairs.iter().map(|p| p.converged).collect(),
            iterations: pairs.iter().map(|p| p.iterations).collect(),
        })
    }
}
