use super::spatial_dims;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Flat input offsets of the selected maxima, one per (sample, channel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices(pub Vec<usize>);

fn pooled_shape(batched: bool, b: usize, c: usize) -> Vec<usize> {
    if batched {
        vec![b, c]
    } else {
        vec![c]
    }
}

/// Per-channel mean over the spatial axes: a sequential row-major sum
/// followed by one division by `H·W`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, h, w, c, batched) = spatial_dims("global_avg_pool", input.shape())?;
    if h == 0 || w == 0 {
        return Err(Error::shape("global_avg_pool", "empty spatial extent"));
    }
    let count = T::lit((h * w) as f64);
    let x = input.data();
    let mut out = vec![T::zero(); b * c];
    for bi in 0..b {
        let acc = &mut out[bi * c..(bi + 1) * c];
        for px in x[bi * h * w * c..(bi + 1) * h * w * c].chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= count);
    }
    Tensor::new(pooled_shape(batched, b, c), out)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, h, w, c, _) = spatial_dims("global_avg_pool_backward", input_shape)?;
    if grad_out.len() != b * c {
        return Err(Error::shape("global_avg_pool_backward", format!("grad {:?}", grad_out.shape())));
    }
    let inv = T::one() / T::lit((h * w) as f64);
    let g = grad_out.data();
    let mut out = Vec::with_capacity(b * h * w * c);
    for bi in 0..b {
        let row = &g[bi * c..(bi + 1) * c];
        for _ in 0..h * w {
            out.extend(row.iter().map(|&v| v * inv));
        }
    }
    Tensor::new(input_shape.to_vec(), out)
}

/// Per-channel maximum; ties resolve to the first element in row-major order.
pub fn global_max_pool<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (b, h, w, c, batched) = spatial_dims("global_max_pool", input.shape())?;
    if h == 0 || w == 0 {
        return Err(Error::shape("global_max_pool", "empty spatial extent"));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(b * c);
    let mut idx = Vec::with_capacity(b * c);
    for bi in 0..b {
        let base = bi * h * w * c;
        for ch in 0..c {
            let mut best = base + ch;
            for p in 1..h * w {
                let i = base + p * c + ch;
                if x[i] > x[best] {
                    best = i;
                }
            }
            out.push(x[best]);
            idx.push(best);
        }
    }
    Ok((Tensor::new(pooled_shape(batched, b, c), out)?, PoolIndices(idx)))
}

pub fn global_max_pool_backward<T: Scalar>(
    input_shape: &[usize],
    indices: &PoolIndices,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != indices.0.len() {
        return Err(Error::shape("global_max_pool_backward", format!("grad {:?}", grad_out.shape())));
    }
    let mut out = Tensor::zeros(input_shape);
    let d = out.data_mut();
    for (&i, &g) in indices.0.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(out)
}
