use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        let ok = [&self.beta, &self.running_mean, &self.running_var]
            .iter()
            .all(|t| t.shape() == [c])
            && self.gamma.shape() == [c];
        if !ok {
            return Err(Error::shape("batch_norm", "per-channel tensors disagree in length"));
        }
        if self.running_var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::InvalidArgument("negative running variance".into()));
        }
        if self.epsilon <= 0.0 || !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::InvalidArgument("epsilon must be > 0 and momentum in (0,1)".into()));
        }
        Ok(())
    }
}

/// Saved values needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub training: bool,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Normalize channels-last `input` (any rank, channel axis last).
///
/// In training mode the batch statistics are used and the returned state
/// carries updated running statistics; in eval mode the running statistics
/// are used and the state is returned unchanged.
pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    state: &BatchNormState<T>,
    training: bool,
) -> Result<(Tensor<T>, BatchNormCache<T>, BatchNormState<T>)> {
    state.validate()?;
    let c = state.channels();
    if input.shape().last() != Some(&c) {
        return Err(Error::shape("batch_norm", format!("input {:?} vs {c} channels", input.shape())));
    }
    let rows = input.len() / c;
    if rows == 0 {
        return Err(Error::shape("batch_norm", "empty input"));
    }
    let x = input.data();
    let eps = T::lit(state.epsilon);
    let mut new_state = state.clone();
    let (mean, var) = if training {
        let n = T::lit(rows as f64);
        let mut mean = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let mom = T::lit(state.momentum);
        let rest = T::one() - mom;
        for (i, (&m, &v)) in mean.iter().zip(&var).enumerate() {
            new_state.running_mean.data_mut()[i] = mom * state.running_mean.data()[i] + rest * m;
            new_state.running_var.data_mut()[i] = mom * state.running_var.data()[i] + rest * v;
        }
        (mean, var)
    } else {
        (state.running_mean.data().to_vec(), state.running_var.data().to_vec())
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    let (gamma, beta) = (state.gamma.data(), state.beta.data());
    for row in x.chunks_exact(c) {
        for ch in 0..c {
            let xh = (row[ch] - mean[ch]) * inv_std[ch];
            normalized.push(xh);
            out.push(gamma[ch] * xh + beta[ch]);
        }
    }
    let out = Tensor::new(input.shape().to_vec(), out)?.ensure_finite("batch_norm")?;
    Ok((
        out,
        BatchNormCache {
            normalized: Tensor::new(input.shape().to_vec(), normalized)?,
            inv_std,
            training,
        },
        new_state,
    ))
}

pub fn batch_norm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    if !cache.normalized.same_shape(grad_out) {
        return Err(Error::shape("batch_norm_backward", format!("grad {:?}", grad_out.shape())));
    }
    let c = gamma.len();
    let rows = grad_out.len() / c;
    let xh = cache.normalized.data();
    let g = grad_out.data();
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for (grow, xrow) in g.chunks_exact(c).zip(xh.chunks_exact(c)) {
        for ch in 0..c {
            sum_g[ch] += grow[ch];
            sum_gx[ch] += grow[ch] * xrow[ch];
        }
    }
    let n = T::lit(rows as f64);
    let gd = gamma.data();
    let mut gx = Vec::with_capacity(g.len());
    for (grow, xrow) in g.chunks_exact(c).zip(xh.chunks_exact(c)) {
        for ch in 0..c {
            let scale = gd[ch] * cache.inv_std[ch];
            let v = if cache.training {
                scale / n * (n * grow[ch] - sum_g[ch] - xrow[ch] * sum_gx[ch])
            } else {
                scale * grow[ch]
            };
            gx.push(v);
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape().to_vec(), gx)?,
        gamma: Tensor::new(vec![c], sum_gx)?,
        beta: Tensor::new(vec![c], sum_g)?,
    })
}
