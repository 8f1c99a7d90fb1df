use super::vector_dims;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (b, d_in, _) = vector_dims("dense", input.shape())?;
    match *weight.shape() {
        [wi, wo] if wi == d_in => Ok((b, d_in, wo)),
        _ => Err(Error::shape(
            "dense",
            format!("input {:?} vs weight {:?}", input.shape(), weight.shape()),
        )),
    }
}

/// `input · weight + bias` with `weight` laid out `[d_in, d_out]`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, d_in, d_out) = check(input, weight)?;
    if bias.shape() != [d_out] {
        return Err(Error::shape("dense", format!("bias {:?}, expected [{d_out}]", bias.shape())));
    }
    let x = input.data();
    let w = weight.data();
    let mut out = Vec::with_capacity(b * d_out);
    for r in 0..b {
        let mut acc = bias.data().to_vec();
        for (i, &xv) in x[r * d_in..(r + 1) * d_in].iter().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(&w[i * d_out..(i + 1) * d_out]) {
                *a += xv * wv;
            }
        }
        out.extend(acc);
    }
    let shape = if input.rank() == 2 { vec![b, d_out] } else { vec![d_out] };
    Tensor::new(shape, out)?.ensure_finite("dense")
}

pub fn dense_backward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<DenseGrads<T>> {
    let (b, d_in, d_out) = check(input, weight)?;
    if grad_out.len() != b * d_out {
        return Err(Error::shape("dense_backward", format!("grad {:?}", grad_out.shape())));
    }
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let mut gw = vec![T::zero(); d_in * d_out];
    let mut gb = vec![T::zero(); d_out];
    let mut gx = vec![T::zero(); b * d_in];
    for r in 0..b {
        let gr = &g[r * d_out..(r + 1) * d_out];
        for (a, &gv) in gb.iter_mut().zip(gr) {
            *a += gv;
        }
        for i in 0..d_in {
            let xv = x[r * d_in + i];
            let wrow = &w[i * d_out..(i + 1) * d_out];
            let mut dot = T::zero();
            for ((a, &wv), &gv) in gw[i * d_out..(i + 1) * d_out].iter_mut().zip(wrow).zip(gr) {
                *a += xv * gv;
                dot += wv * gv;
            }
            gx[r * d_in + i] = dot;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weight: Tensor::new(vec![d_in, d_out], gw)?,
        bias: Tensor::new(vec![d_out], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_and_zero_weights() {
        let x = t(&[3], &[1.5, -2.0, 0.25]);
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
        let bias = t(&[2], &[0.3, -0.7]);
        assert_eq!(dense(&x, &Tensor::zeros(&[3, 2]), &bias).unwrap(), bias);
    }

    #[test]
    fn hand_multiply() {
        // [1,2] · [[1,0],[0,3]] + [0.5,0.5] = [1.5, 6.5]
        let y = dense(&t(&[2], &[1., 2.]), &t(&[2, 2], &[1., 0., 0., 3.]), &t(&[2], &[0.5, 0.5])).unwrap();
        assert_eq!(y.data(), &[1.5, 6.5]);
    }

    #[test]
    fn batched_rows_are_independent() {
        let w = t(&[2, 2], &[1., 2., 3., 4.]);
        let bias = t(&[2], &[0., 1.]);
        let y = dense(&t(&[2, 2], &[1., 0., 0., 1.]), &w, &bias).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.data(), &[1., 3., 3., 5.]);
    }

    #[test]
    fn rejects_mismatch() {
        assert!(dense(&t(&[3], &[0.; 3]), &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2])).is_err());
        assert!(dense(&t(&[2], &[0.; 2]), &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[3])).is_err());
    }
}
