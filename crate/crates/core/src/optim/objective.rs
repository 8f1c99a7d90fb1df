use crate::error::{Error, Result};
use crate::model::{ModelGraph, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// Loss and gradient of one minibatch.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub loss: f64,
    pub grads: ParamSet<T>,
    /// Non-trainable slots refreshed by the evaluation (BN running stats).
    pub buffers: ParamSet<T>,
}

/// A finite-sum objective: mean loss over a subset of indexed samples.
pub trait Objective<T: Scalar> {
    fn num_samples(&self) -> usize;

    /// Mean loss over `batch` at `w`. `seed` drives any stochastic layers.
    fn evaluate(&self, w: &ParamSet<T>, batch: &[usize], seed: u64) -> Result<Evaluation<T>>;
}

/// Cross-entropy of a model graph over an in-memory dataset, in training mode.
pub struct ModelObjective<'a, T> {
    pub graph: &'a ModelGraph,
    pub inputs: &'a Tensor<T>,
    pub labels: &'a [usize],
}

impl<'a, T: Scalar> ModelObjective<'a, T> {
    pub fn new(graph: &'a ModelGraph, inputs: &'a Tensor<T>, labels: &'a [usize]) -> Result<Self> {
        if inputs.shape().first() != Some(&labels.len()) {
            return Err(Error::Data(format!(
                "{} labels for inputs of shape {:?}",
                labels.len(),
                inputs.shape()
            )));
        }
        Ok(ModelObjective { graph, inputs, labels })
    }
}

impl<T: Scalar> Objective<T> for ModelObjective<'_, T> {
    fn num_samples(&self) -> usize {
        self.labels.len()
    }

    fn evaluate(&self, w: &ParamSet<T>, batch: &[usize], seed: u64) -> Result<Evaluation<T>> {
        let x = self.inputs.gather(batch)?;
        let y: Vec<usize> = batch.iter().map(|&i| self.labels[i]).collect();
        let out = self.graph.loss_and_grad(w, &x, &y, seed)?;
        Ok(Evaluation {
            loss: out.loss.to_f64().unwrap_or(f64::NAN),
            grads: out.grads,
            buffers: out.buffers,
        })
    }
}

/// Per-sample loss `sum_j (w_j - c_i)^2` over a single slot `"w"`, one
/// target `c_i` per sample. Useful as a closed-form oracle.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub targets: Vec<f64>,
    pub dim: usize,
}

impl QuadraticObjective {
    pub const SLOT: &'static str = "w";

    pub fn new(targets: Vec<f64>, dim: usize) -> Self {
        QuadraticObjective { targets, dim }
    }

    pub fn init<T: Scalar>(&self, value: f64) -> ParamSet<T> {
        let mut p = ParamSet::new();
        p.insert(Self::SLOT, Tensor::full(&[self.dim], T::lit(value)));
        p
    }
}

impl<T: Scalar> Objective<T> for QuadraticObjective {
    fn num_samples(&self) -> usize {
        self.targets.len()
    }

    fn evaluate(&self, w: &ParamSet<T>, batch: &[usize], _seed: u64) -> Result<Evaluation<T>> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let wv = w.require(Self::SLOT)?;
        let n = T::lit(batch.len() as f64);
        let mut loss = T::zero();
        let mut grad = vec![T::zero(); wv.len()];
        for &i in batch {
            let c = T::lit(*self.targets.get(i).ok_or_else(|| Error::Data(format!("sample {i} out of range")))?);
            for (g, &x) in grad.iter_mut().zip(wv.data()) {
                loss += (x - c) * (x - c);
                *g += T::lit(2.0) * (x - c);
            }
        }
        let mut grads = ParamSet::new();
        grads.insert(Self::SLOT, Tensor::new(wv.shape().to_vec(), grad.into_iter().map(|g| g / n).collect())?);
        Ok(Evaluation {
            loss: (loss / n).to_f64().unwrap_or(f64::NAN),
            grads,
            buffers: ParamSet::new(),
        })
    }
}
