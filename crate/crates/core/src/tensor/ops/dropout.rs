use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Inverted dropout: `p` is the drop probability, kept values are scaled
/// by `1 / (1 - p)` at train time so evaluation is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub p: f64,
    pub training: bool,
    pub seed: u64,
}

/// Returns the output and the multiplicative mask (0 or `1/(1-p)`).
pub fn dropout<T: Scalar>(input: &Tensor<T>, spec: &DropoutSpec) -> Result<(Tensor<T>, Tensor<T>)> {
    if !(0.0..1.0).contains(&spec.p) {
        return Err(Error::InvalidArgument(format!("dropout probability {} outside [0, 1)", spec.p)));
    }
    if spec.p == 0.0 || !spec.training {
        return Ok((input.clone(), Tensor::ones(input.shape())));
    }
    let keep_scale = T::lit(1.0 / (1.0 - spec.p));
    let mut rng = Rng::new(spec.seed);
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.next_f64() >= spec.p { keep_scale } else { T::zero() })
        .collect();
    let out = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        Tensor::new(input.shape().to_vec(), mask)?,
    ))
}

pub fn dropout_backward<T: Scalar>(mask: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if !mask.same_shape(grad_out) {
        return Err(Error::shape("dropout_backward", format!("{:?} vs {:?}", mask.shape(), grad_out.shape())));
    }
    let data = mask.data().iter().zip(grad_out.data()).map(|(&m, &g)| m * g).collect();
    Tensor::new(mask.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let x = Tensor::<f64>::from_f64(&[4], &[1.0, -2.0, 3.5, 0.1]).unwrap();
        let (y, m) = dropout(&x, &DropoutSpec { p: 0.0, training: true, seed: 1 }).unwrap();
        assert_eq!(y, x);
        assert!(m.data().iter().all(|&v| v == 1.0));
        let (y, _) = dropout(&x, &DropoutSpec { p: 0.7, training: false, seed: 1 }).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn inverted_scaling_preserves_mean() {
        let x = Tensor::<f64>::ones(&[100_000]);
        let (y, _) = dropout(&x, &DropoutSpec { p: 0.4, training: true, seed: 2024 }).unwrap();
        let mean = y.sum() / 100_000.0;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
    }

    #[test]
    fn fixed_seed_gives_identical_masks() {
        let x = Tensor::<f32>::ones(&[64]);
        let spec = DropoutSpec { p: 0.5, training: true, seed: 9 };
        assert_eq!(dropout(&x, &spec).unwrap().1, dropout(&x, &spec).unwrap().1);
    }

    #[test]
    fn rejects_bad_probability() {
        let x = Tensor::<f64>::ones(&[2]);
        assert!(dropout(&x, &DropoutSpec { p: 1.0, training: true, seed: 0 }).is_err());
        assert!(dropout(&x, &DropoutSpec { p: -0.1, training: false, seed: 0 }).is_err());
    }
}
