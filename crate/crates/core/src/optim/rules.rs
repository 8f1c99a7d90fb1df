use serde::{Deserialize, Serialize};

use super::objective::{Evaluation, Objective};
use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::tensor::{Scalar, Tensor};

fn check_slot<T: Scalar>(name: &str, w: &Tensor<T>, g: &Tensor<T>) -> Result<()> {
    if w.shape() != g.shape() {
        return Err(Error::shape(
            "update",
            format!("slot {name}: weights {:?} vs gradient {:?}", w.shape(), g.shape()),
        ));
    }
    Ok(())
}

fn check_grads<T: Scalar>(w: &ParamSet<T>, grad: &ParamSet<T>) -> Result<()> {
    for (name, g) in grad.iter() {
        let wt = w
            .get(name)
            .ok_or_else(|| Error::shape("update", format!("gradient for unknown slot {name}")))?;
        check_slot(name, wt, g)?;
    }
    Ok(())
}

/// `w - lr * grad`. Slots without a gradient are copied unchanged.
pub fn sgd_step<T: Scalar>(w: &ParamSet<T>, grad: &ParamSet<T>, lr: f64) -> Result<ParamSet<T>> {
    check_grads(w, grad)?;
    let lr = T::lit(lr);
    let mut out = w.clone();
    for (name, t) in out.iter_mut() {
        if let Some(g) = grad.get(name) {
            for (x, &d) in t.data_mut().iter_mut().zip(g.data()) {
                *x -= lr * d;
            }
        }
    }
    Ok(out)
}

/// Divide a learning rate by `factor > 1`.
pub fn reduce_lr(lr: f64, factor: f64) -> Result<f64> {
    if !(factor > 1.0) || !factor.is_finite() {
        return Err(Error::InvalidArgument(format!("lr reduction factor must exceed 1, got {factor}")));
    }
    Ok(lr / factor)
}

/// Adam moment estimates and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    pub const ALPHA: f64 = 0.001;
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(alpha: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            m: ParamSet::new(),
            v: ParamSet::new(),
            t: 0,
            alpha,
            beta1,
            beta2,
            epsilon,
        }
    }
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new(Self::ALPHA, Self::BETA1, Self::BETA2, Self::EPSILON)
    }
}

/// One Adam update. Moments are created lazily (zeros) for every slot that
/// has a gradient; other slots keep their weights.
pub fn adam_step<T: Scalar>(
    state: &AdamState<T>,
    w: &ParamSet<T>,
    grad: &ParamSet<T>,
) -> Result<(AdamState<T>, ParamSet<T>)> {
    check_grads(w, grad)?;
    let mut next = state.clone();
    next.t += 1;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let (r1, r2) = (T::one() - b1, T::one() - b2);
    let c1 = T::lit(1.0 - state.beta1.powi(next.t as i32));
    let c2 = T::lit(1.0 - state.beta2.powi(next.t as i32));
    let (alpha, eps) = (T::lit(state.alpha), T::lit(state.epsilon));
    let mut out = w.clone();
    for (name, g) in grad.iter() {
        let zeros = || Tensor::zeros(g.shape());
        let mut m = next.m.get(name).cloned().unwrap_or_else(zeros);
        let mut v = next.v.get(name).cloned().unwrap_or_else(zeros);
        check_slot(name, &m, g)?;
        let wt = out.get_mut(name).expect("checked above");
        for (((x, mi), vi), &gi) in wt.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
            *mi = b1 * *mi + r1 * gi;
            *vi = b2 * *vi + r2 * gi * gi;
            let mh = *mi / c1;
            let vh = *vi / c2;
            *x -= alpha * mh / (vh.sqrt() + eps);
        }
        next.m.insert(name.clone(), m);
        next.v.insert(name.clone(), v);
    }
    Ok((next, out))
}

/// Snapshot and full local gradient for variance-reduced steps.
#[derive(Debug, Clone)]
pub struct SvrgState<T> {
    pub snapshot: ParamSet<T>,
    pub full_grad: ParamSet<T>,
    pub inner_steps: usize,
}

/// Full gradient of the mean loss over `indices` at `w`, accumulated over
/// consecutive chunks of at most `chunk` samples weighted by chunk size.
pub fn svrg_prepare<T: Scalar, O: Objective<T> + ?Sized>(
    objective: &O,
    w: &ParamSet<T>,
    indices: &[usize],
    chunk: usize,
    seed: u64,
) -> Result<SvrgState<T>> {
    if indices.is_empty() {
        return Err(Error::Data("SVRG needs a nonempty local dataset".into()));
    }
    if chunk == 0 {
        return Err(Error::InvalidArgument("chunk size must be positive".into()));
    }
    let total = indices.len() as f64;
    let mut full: Option<ParamSet<T>> = None;
    for (i, part) in indices.chunks(chunk).enumerate() {
        let eval = objective.evaluate(w, part, crate::rng::derive(seed, "chunk", i as u64))?;
        let weight = T::lit(part.len() as f64 / total);
        match &mut full {
            None => {
                let mut g = eval.grads;
                for (_, t) in g.iter_mut() {
                    t.data_mut().iter_mut().for_each(|x| *x *= weight);
                }
                full = Some(g);
            }
            Some(acc) => {
                for (name, t) in acc.iter_mut() {
                    let g = eval.grads.require(name)?;
                    for (a, &b) in t.data_mut().iter_mut().zip(g.data()) {
                        *a += weight * b;
                    }
                }
            }
        }
    }
    Ok(SvrgState {
        snapshot: w.clone(),
        full_grad: full.expect("at least one chunk"),
        inner_steps: 0,
    })
}

/// `w - lr * (g_batch(w) + (g_full - g_batch(w_snap)))`, both batch
/// gradients taken with the same seed. Returns the evaluation at `w` and the
/// updated weights, with buffers from the evaluation at `w` applied.
pub fn svrg_step<T: Scalar, O: Objective<T> + ?Sized>(
    state: &mut SvrgState<T>,
    objective: &O,
    w: &ParamSet<T>,
    batch: &[usize],
    lr: f64,
    seed: u64,
) -> Result<(Evaluation<T>, ParamSet<T>)> {
    let at_w = objective.evaluate(w, batch, seed)?;
    let at_snap = objective.evaluate(&state.snapshot, batch, seed)?;
    let mut direction = at_w.grads.clone();
    for (name, d) in direction.iter_mut() {
        let gs = at_snap.grads.require(name)?;
        let gf = state.full_grad.require(name)?;
        check_slot(name, d, gs)?;
        check_slot(name, d, gf)?;
        for ((x, &s), &f) in d.data_mut().iter_mut().zip(gs.data()).zip(gf.data()) {
            *x += f - s;
        }
    }
    let mut next = sgd_step(w, &direction, lr)?;
    next.update_from(&at_w.buffers);
    state.inner_steps += 1;
    Ok((at_w, next))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Svrg,
}

fn default_betas() -> [f64; 2] {
    [AdamState::<f64>::BETA1, AdamState::<f64>::BETA2]
}

fn default_epsilon() -> f64 {
    AdamState::<f64>::EPSILON
}

/// Optimizer section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(rename = "type")]
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_betas")]
    pub betas: [f64; 2],
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam(AdamState::<f64>::ALPHA)
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Sgd, lr, betas: default_betas(), epsilon: default_epsilon() }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, ..OptimizerConfig::sgd(lr) }
    }

    pub fn svrg(lr: f64) -> Self {
        OptimizerConfig { kind: OptimizerKind::Svrg, ..OptimizerConfig::sgd(lr) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("optimizer lr must be positive, got {}", self.lr)));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config(format!("adam betas must lie in [0, 1), got {:?}", self.betas)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("adam epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn build<T: Scalar>(&self) -> Result<Optimizer<T>> {
        self.validate()?;
        Ok(match self.kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr: self.lr },
            OptimizerKind::Adam => {
                Optimizer::Adam(AdamState::new(self.lr, self.betas[0], self.betas[1], self.epsilon))
            }
            OptimizerKind::Svrg => Optimizer::Svrg { lr: self.lr, state: None },
        })
    }
}

/// Stateful update rule driven by the epoch loop.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd { lr: f64 },
    Adam(AdamState<T>),
    Svrg { lr: f64, state: Option<SvrgState<T>> },
}

impl<T: Scalar> Optimizer<T> {
    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } | Optimizer::Svrg { lr, .. } => *lr,
            Optimizer::Adam(s) => s.alpha,
        }
    }

    pub fn set_lr(&mut self, value: f64) {
        match self {
            Optimizer::Sgd { lr } | Optimizer::Svrg { lr, .. } => *lr = value,
            Optimizer::Adam(s) => s.alpha = value,
        }
    }

    /// Called before each pass over the local data; SVRG takes a new
    /// snapshot and full gradient here.
    pub fn begin_epoch<O: Objective<T> + ?Sized>(
        &mut self,
        objective: &O,
        w: &ParamSet<T>,
        indices: &[usize],
        chunk: usize,
        seed: u64,
    ) -> Result<()> {
        if let Optimizer::Svrg { state, .. } = self {
            *state = Some(svrg_prepare(objective, w, indices, chunk, seed)?);
        }
        Ok(())
    }

    /// One minibatch update of `w` in place.
    pub fn step<O: Objective<T> + ?Sized>(
        &mut self,
        objective: &O,
        w: &mut ParamSet<T>,
        batch: &[usize],
        seed: u64,
    ) -> Result<Evaluation<T>> {
        let (eval, next) = match self {
            Optimizer::Sgd { lr } => {
                let eval = objective.evaluate(w, batch, seed)?;
                let mut next = sgd_step(w, &eval.grads, *lr)?;
                next.update_from(&eval.buffers);
                (eval, next)
            }
            Optimizer::Adam(state) => {
                let eval = objective.evaluate(w, batch, seed)?;
                let (s, mut next) = adam_step(state, w, &eval.grads)?;
                *state = s;
                next.update_from(&eval.buffers);
                (eval, next)
            }
            Optimizer::Svrg { lr, state } => {
                let state = state
                    .as_mut()
                    .ok_or_else(|| Error::InvalidArgument("SVRG step before begin_epoch".into()))?;
                svrg_step(state, objective, w, batch, *lr, seed)?
            }
        };
        if !next.is_finite() {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        *w = next;
        Ok(eval)
    }
}
