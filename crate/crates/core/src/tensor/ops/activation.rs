use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the upstream gradient where the input was positive; the
/// subgradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if !input.same_shape(grad_out) {
        return Err(Error::shape("relu_backward", format!("{:?} vs {:?}", input.shape(), grad_out.shape())));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Softmax over the last axis, with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let k = *logits.shape().last().ok_or_else(|| Error::shape("softmax", "rank 0"))?;
    if k == 0 {
        return Err(Error::shape("softmax", "empty class axis"));
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let total = exps.iter().fold(T::zero(), |a, &e| a + e);
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Vector-Jacobian product of softmax given its output `probs`:
/// `dx = p ⊙ (g - <g, p>)` per row.
pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if !probs.same_shape(grad_out) {
        return Err(Error::shape("softmax_backward", format!("{:?} vs {:?}", probs.shape(), grad_out.shape())));
    }
    let k = *probs.shape().last().ok_or_else(|| Error::shape("softmax_backward", "rank 0"))?;
    let mut out = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks_exact(k).zip(grad_out.data().chunks_exact(k)) {
        let dot = p.iter().zip(g).fold(T::zero(), |a, (&pv, &gv)| a + pv * gv);
        out.extend(p.iter().zip(g).map(|(&pv, &gv)| pv * (gv - dot)));
    }
    Tensor::new(probs.shape().to_vec(), out)
}
