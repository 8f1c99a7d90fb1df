use super::vector_dims;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Concatenate per-sample vectors: `[D1] ++ [D2]` or row-wise for `[B, D]`.
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, da, batched_a) = vector_dims("concat", a.shape())?;
    let (bb, db, batched_b) = vector_dims("concat", b.shape())?;
    if ba != bb || batched_a != batched_b {
        return Err(Error::shape("concat", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    for r in 0..ba {
        out.extend_from_slice(&a.data()[r * da..(r + 1) * da]);
        out.extend_from_slice(&b.data()[r * db..(r + 1) * db]);
    }
    let shape = if batched_a { vec![ba, da + db] } else { vec![da + db] };
    Tensor::new(shape, out)
}

/// Split the upstream gradient back into the two concatenated parts.
pub fn concat_backward<T: Scalar>(first_width: usize, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, d, batched) = vector_dims("concat_backward", grad_out.shape())?;
    if first_width > d {
        return Err(Error::shape("concat_backward", format!("split {first_width} > {d}")));
    }
    let g = grad_out.data();
    let (mut ga, mut gb) = (Vec::new(), Vec::new());
    for r in 0..b {
        ga.extend_from_slice(&g[r * d..r * d + first_width]);
        gb.extend_from_slice(&g[r * d + first_width..(r + 1) * d]);
    }
    let (sa, sb) = if batched {
        (vec![b, first_width], vec![b, d - first_width])
    } else {
        (vec![first_width], vec![d - first_width])
    };
    Ok((Tensor::new(sa, ga)?, Tensor::new(sb, gb)?))
}

/// Elementwise sum of equally shaped tensors.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn concat_and_split() {
        assert_eq!(concat(&t(&[1], &[1.]), &t(&[2], &[2., 3.])).unwrap().data(), &[1., 2., 3.]);
        let x = t(&[2], &[4., 5.]);
        assert_eq!(concat(&x, &t(&[0], &[])).unwrap(), x);
        let (a, b) = concat_backward(1, &t(&[3], &[7., 8., 9.])).unwrap();
        assert_eq!((a.data(), b.data()), (&[7.][..], &[8., 9.][..]));
    }

    #[test]
    fn batched_concat_is_row_wise() {
        let y = concat(&t(&[2, 1], &[1., 2.]), &t(&[2, 2], &[3., 4., 5., 6.])).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.data(), &[1., 3., 4., 2., 5., 6.]);
    }

    #[test]
    fn concat_rejects_rank_mismatch() {
        assert!(concat(&t(&[1, 1, 1], &[1.]), &t(&[1], &[1.])).is_err());
        assert!(concat(&t(&[2, 1], &[1., 2.]), &t(&[1], &[1.])).is_err());
    }
}
