//! Whole-graph forward and reverse-mode backward passes.

use super::graph::{ModelGraph, NodeId, Op};
use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::optim::loss::{cce_from_labels, softmax_cce_grad};
use crate::rng;
use crate::tensor::ops::{self, BatchNormCache, BatchNormState, DropoutSpec, PoolIndices};
use crate::tensor::{Scalar, Tensor};

/// Execution mode. Training mode draws dropout masks from streams derived
/// from `seed` and each dropout node's name, and normalizes with batch
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

impl Mode {
    pub fn is_training(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

#[derive(Debug, Clone)]
enum Aux<T> {
    None,
    Mask(Tensor<T>),
    Norm(BatchNormCache<T>),
    Argmax(PoolIndices),
}

/// Activations and saved state of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    values: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
    /// Running statistics after this pass (unchanged in eval mode).
    pub buffers: ParamSet<T>,
    output: NodeId,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.values[self.output]
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.values[id]
    }

    pub fn into_output(mut self) -> Tensor<T> {
        self.values.swap_remove(self.output)
    }
}

/// Where the backward pass starts.
#[derive(Debug, Clone)]
pub enum GradSeed<T> {
    /// Gradient with respect to the graph output.
    Output(Tensor<T>),
    /// Gradient with respect to the input of a terminal softmax node.
    Logits(Tensor<T>),
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// Gradients for every trainable slot reached by the pass.
    pub params: ParamSet<T>,
    pub input: Option<Tensor<T>>,
}

/// Loss, gradients and updated running statistics of one training step.
#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub loss: T,
    pub grads: ParamSet<T>,
    pub buffers: ParamSet<T>,
}

fn bn_state<T: Scalar>(params: &ParamSet<T>, op: &Op) -> Result<BatchNormState<T>> {
    let Op::BatchNorm {
        gamma,
        beta,
        running_mean,
        running_var,
        epsilon,
        momentum,
    } = op
    else {
        unreachable!("bn_state on non-BN op")
    };
    Ok(BatchNormState {
        gamma: params.require(gamma)?.clone(),
        beta: params.require(beta)?.clone(),
        running_mean: params.require(running_mean)?.clone(),
        running_var: params.require(running_var)?.clone(),
        epsilon: *epsilon,
        momentum: *momentum,
    })
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl ModelGraph {
    /// Run the graph on a batch shaped `[B, ..input_shape]`.
    pub fn forward_trace<T: Scalar>(&self, params: &ParamSet<T>, batch: &Tensor<T>, mode: Mode) -> Result<Trace<T>> {
        if batch.rank() != self.input_shape().len() + 1 || &batch.shape()[1..] != self.input_shape() {
            return Err(Error::shape(
                "forward",
                format!("batch {:?} does not match input {:?}", batch.shape(), self.input_shape()),
            ));
        }
        let training = mode.is_training();
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes().len());
        let mut aux = Vec::with_capacity(self.nodes().len());
        let mut buffers = ParamSet::new();
        for node in self.nodes() {
            let arg = |k: usize| &values[node.inputs[k]];
            let (value, a) = match &node.op {
                Op::Input => (batch.clone(), Aux::None),
                Op::Conv { spec, kernel, bias } => {
                    let k = params.require(kernel)?;
                    let b = bias.as_deref().map(|b| params.require(b)).transpose()?;
                    let y = if spec.is_depthwise() {
                        ops::depthwise_conv2d(arg(0), spec, k, b)?
                    } else {
                        ops::conv2d(arg(0), spec, k, b)?
                    };
                    (y, Aux::None)
                }
                Op::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } => {
                    let state = bn_state(params, &node.op)?;
                    let (y, cache, next) = ops::batch_norm(arg(0), &state, training)?;
                    if training {
                        buffers.insert(running_mean.clone(), next.running_mean);
                        buffers.insert(running_var.clone(), next.running_var);
                    }
                    (y, Aux::Norm(cache))
                }
                Op::Relu => (ops::relu(arg(0)), Aux::None),
                Op::Dropout { p } => {
                    let seed = match mode {
                        Mode::Train { seed } => rng::derive(seed, &node.name, 0),
                        Mode::Eval => 0,
                    };
                    let spec = DropoutSpec { p: *p, training, seed };
                    let (y, mask) = ops::dropout(arg(0), &spec)?;
                    (y, if training { Aux::Mask(mask) } else { Aux::None })
                }
                Op::Add => (ops::add(arg(0), arg(1))?, Aux::None),
                Op::GlobalAvgPool => (ops::global_avg_pool(arg(0))?, Aux::None),
                Op::GlobalMaxPool => {
                    let (y, idx) = ops::global_max_pool(arg(0))?;
                    (y, Aux::Argmax(idx))
                }
                Op::Flatten => {
                    let x = arg(0);
                    let b = x.shape()[0];
                    let rest = x.len() / b.max(1);
                    (x.clone().reshape(&[b, rest])?, Aux::None)
                }
                Op::Dense { weight, bias } => (
                    ops::dense(arg(0), params.require(weight)?, params.require(bias)?)?,
                    Aux::None,
                ),
                Op::Concat => (ops::concat(arg(0), arg(1))?, Aux::None),
                Op::Softmax => (ops::softmax(arg(0))?, Aux::None),
            };
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("activation of {}", node.name)));
            }
            values.push(value);
            aux.push(a);
        }
        Ok(Trace {
            values,
            aux,
            buffers,
            output: self.output(),
        })
    }

    /// Output of the graph (class probabilities for classifier graphs).
    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        Ok(self.forward_trace(params, batch, mode)?.into_output())
    }

    /// Reverse-mode pass over the nodes of `trace`.
    pub fn backward<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        trace: &Trace<T>,
        seed: GradSeed<T>,
        need_input_grad: bool,
    ) -> Result<Gradients<T>> {
        let n = self.nodes().len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        let out = self.output();
        match seed {
            GradSeed::Output(g) => {
                if g.shape() != trace.values[out].shape() {
                    return Err(Error::shape("backward", format!("seed {:?}", g.shape())));
                }
                grads[out] = Some(g);
            }
            GradSeed::Logits(g) => {
                let node = self.node(out);
                if node.op != Op::Softmax {
                    return Err(Error::InvalidArgument("logit seed requires a softmax output".into()));
                }
                let src = node.inputs[0];
                if g.shape() != trace.values[src].shape() {
                    return Err(Error::shape("backward", format!("seed {:?}", g.shape())));
                }
                grads[src] = Some(g);
            }
        }
        let mut pgrads = ParamSet::new();
        let mut input_grad = None;
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = self.node(id);
            let x = |k: usize| &trace.values[node.inputs[k]];
            let wants = |k: usize| need_input_grad || node.inputs[k] != 0;
            match &node.op {
                Op::Input => input_grad = Some(g),
                Op::Conv { spec, kernel, bias } => {
                    let k = params.require(kernel)?;
                    let cg = if spec.is_depthwise() {
                        ops::depthwise_conv2d_backward(x(0), spec, k, bias.is_some(), &g, wants(0))?
                    } else {
                        ops::conv2d_backward(x(0), spec, k, bias.is_some(), &g, wants(0))?
                    };
                    pgrads.insert(kernel.clone(), cg.kernel);
                    if let (Some(name), Some(gb)) = (bias, cg.bias) {
                        pgrads.insert(name.clone(), gb);
                    }
                    if let Some(gi) = cg.input {
                        accumulate(&mut grads[node.inputs[0]], gi)?;
                    }
                }
                Op::BatchNorm { gamma, beta, .. } => {
                    let Aux::Norm(cache) = &trace.aux[id] else { unreachable!("bn cache") };
                    let bg = ops::batch_norm_backward(cache, params.require(gamma)?, &g)?;
                    pgrads.insert(gamma.clone(), bg.gamma);
                    pgrads.insert(beta.clone(), bg.beta);
                    if wants(0) {
                        accumulate(&mut grads[node.inputs[0]], bg.input)?;
                    }
                }
                Op::Relu => {
                    let gi = ops::relu_backward(x(0), &g)?;
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                Op::Dropout { .. } => {
                    let gi = match &trace.aux[id] {
                        Aux::Mask(mask) => ops::dropout_backward(mask, &g)?,
                        _ => g,
                    };
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                Op::Add => {
                    accumulate(&mut grads[node.inputs[1]], g.clone())?;
                    accumulate(&mut grads[node.inputs[0]], g)?;
                }
                Op::GlobalAvgPool => {
                    let gi = ops::global_avg_pool_backward(x(0).shape(), &g)?;
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                Op::GlobalMaxPool => {
                    let Aux::Argmax(idx) = &trace.aux[id] else { unreachable!("argmax") };
                    let gi = ops::global_max_pool_backward(x(0).shape(), idx, &g)?;
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                Op::Flatten => {
                    let gi = g.reshape(x(0).shape())?;
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
                Op::Dense { weight, bias } => {
                    let dg = ops::dense_backward(x(0), params.require(weight)?, &g)?;
                    pgrads.insert(weight.clone(), dg.weight);
                    pgrads.insert(bias.clone(), dg.bias);
                    if wants(0) {
                        accumulate(&mut grads[node.inputs[0]], dg.input)?;
                    }
                }
                Op::Concat => {
                    let width = x(0).shape()[x(0).rank() - 1];
                    let (ga, gb) = ops::concat_backward(width, &g)?;
                    accumulate(&mut grads[node.inputs[1]], gb)?;
                    accumulate(&mut grads[node.inputs[0]], ga)?;
                }
                Op::Softmax => {
                    let gi = ops::softmax_backward(&trace.values[id], &g)?;
                    accumulate(&mut grads[node.inputs[0]], gi)?;
                }
            }
        }
        Ok(Gradients {
            params: pgrads,
            input: input_grad,
        })
    }

    /// Mean cross-entropy over `labels` and its parameter gradients in
    /// training mode. The softmax and loss gradients are fused into
    /// `(p - y) / N` at the logits.
    pub fn loss_and_grad<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        batch: &Tensor<T>,
        labels: &[usize],
        seed: u64,
    ) -> Result<StepOutput<T>> {
        self.loss_and_grad_mode(params, batch, labels, Mode::Train { seed })
    }

    /// Mean cross-entropy only, without the backward pass.
    pub fn loss<T: Scalar>(&self, params: &ParamSet<T>, batch: &Tensor<T>, labels: &[usize], mode: Mode) -> Result<T> {
        if batch.shape().first() != Some(&labels.len()) {
            return Err(Error::shape("loss", format!("{} labels for batch {:?}", labels.len(), batch.shape())));
        }
        let probs = self.forward(params, batch, mode)?;
        cce_from_labels(labels, &probs)
    }

    pub fn loss_and_grad_mode<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        batch: &Tensor<T>,
        labels: &[usize],
        mode: Mode,
    ) -> Result<StepOutput<T>> {
        if batch.shape().first() != Some(&labels.len()) {
            return Err(Error::shape("loss_and_grad", format!("{} labels for batch {:?}", labels.len(), batch.shape())));
        }
        let trace = self.forward_trace(params, batch, mode)?;
        let probs = trace.output();
        let loss = cce_from_labels(labels, probs)?;
        let seed = softmax_cce_grad(labels, probs)?;
        let g = self.backward(params, &trace, GradSeed::Logits(seed), false)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok(StepOutput {
            loss,
            grads: g.params,
            buffers: trace.buffers,
        })
    }
}
