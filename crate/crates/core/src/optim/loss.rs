//! Cross-entropy losses. Probabilities are clipped to
//! `[PROB_CLIP, 1 - PROB_CLIP]` before taking logarithms.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const PROB_CLIP: f64 = 1e-7;

fn clip<T: Scalar>(p: T) -> (T, bool) {
    let lo = T::lit(PROB_CLIP);
    let hi = T::one() - lo;
    if p < lo {
        (lo, false)
    } else if p > hi {
        (hi, false)
    } else {
        (p, true)
    }
}

/// Binary cross-entropy and its gradient with respect to `probs`.
pub fn bce_loss<T: Scalar>(labels: &[T], probs: &[T]) -> Result<(T, Vec<T>)> {
    if labels.len() != probs.len() || labels.is_empty() {
        return Err(Error::shape(
            "bce_loss",
            format!("{} labels vs {} probabilities", labels.len(), probs.len()),
        ));
    }
    let n = T::lit(labels.len() as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(probs.len());
    for (&y, &p) in labels.iter().zip(probs) {
        let (q, inside) = clip(p);
        total += y * q.ln() + (T::one() - y) * (T::one() - q).ln();
        let g = if inside { -(y / q - (T::one() - y) / (T::one() - q)) / n } else { T::zero() };
        grad.push(g);
    }
    Ok((-total / n, grad))
}

/// Categorical cross-entropy of one-hot `targets` against `probs`
/// (both `[N, C]`) and the gradient with respect to `probs`.
pub fn cce_loss<T: Scalar>(targets: &Tensor<T>, probs: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if !targets.same_shape(probs) || probs.rank() != 2 || probs.is_empty() {
        return Err(Error::shape(
            "cce_loss",
            format!("targets {:?} vs probs {:?}", targets.shape(), probs.shape()),
        ));
    }
    let n = T::lit(probs.shape()[0] as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(probs.len());
    for (&y, &p) in targets.data().iter().zip(probs.data()) {
        let (q, inside) = clip(p);
        if y != T::zero() {
            total += y * q.ln();
        }
        grad.push(if inside { -y / q / n } else { T::zero() });
    }
    Ok((-total / n, Tensor::new(probs.shape().to_vec(), grad)?))
}

/// Mean of `-ln(p[label])` over rows of `probs` (`[N, C]`).
pub fn cce_from_labels<T: Scalar>(labels: &[usize], probs: &Tensor<T>) -> Result<T> {
    let c = check_labels("cce_from_labels", labels, probs)?;
    let n = T::lit(labels.len() as f64);
    let mut total = T::zero();
    for (row, &l) in probs.data().chunks_exact(c).zip(labels) {
        total += clip(row[l]).0.ln();
    }
    Ok(-total / n)
}

/// Gradient of the mean cross-entropy with respect to the softmax inputs,
/// `(p - y) / N`.
pub fn softmax_cce_grad<T: Scalar>(labels: &[usize], probs: &Tensor<T>) -> Result<Tensor<T>> {
    let c = check_labels("softmax_cce_grad", labels, probs)?;
    let n = T::lit(labels.len() as f64);
    let mut grad = Vec::with_capacity(probs.len());
    for (row, &l) in probs.data().chunks_exact(c).zip(labels) {
        grad.extend(row.iter().enumerate().map(|(j, &p)| {
            let y = if j == l { T::one() } else { T::zero() };
            (p - y) / n
        }));
    }
    Tensor::new(probs.shape().to_vec(), grad)
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidArgument(format!("label {l} out of range for {classes} classes")));
        }
        t.data_mut()[i * classes + l] = T::one();
    }
    Ok(t)
}

fn check_labels<T: Scalar>(op: &'static str, labels: &[usize], probs: &Tensor<T>) -> Result<usize> {
    let (n, c) = match *probs.shape() {
        [n, c] => (n, c),
        ref s => return Err(Error::shape(op, format!("probs must be [N, C], got {s:?}"))),
    };
    if n != labels.len() || n == 0 {
        return Err(Error::shape(op, format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {c} classes")));
    }
    Ok(c)
}
