use super::objective::Objective;
use super::rules::Optimizer;
use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::rng::{derive, Rng};
use crate::tensor::Scalar;

/// Summary of one pass over a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Sample-weighted mean of the minibatch losses.
    pub mean_loss: f64,
    pub steps: usize,
    pub samples: usize,
}

/// `indices` sorted ascending, then shuffled by the `(stream, epoch)` stream.
pub fn shuffled_order(indices: &[usize], stream: u64, epoch: u64) -> Vec<usize> {
    let mut order = indices.to_vec();
    order.sort_unstable();
    Rng::derived(stream, "shuffle", epoch).shuffle(&mut order);
    order
}

/// Seed for the stochastic layers of one minibatch.
pub fn batch_seed(stream: u64, epoch: u64, batch: u64) -> u64 {
    derive(derive(stream, "step", epoch), "batch", batch)
}

/// How one pass over a sample set is run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochPlan {
    pub batch_size: usize,
    /// Root of this trainer's shuffle and dropout streams.
    pub stream: u64,
    pub epoch: u64,
    /// Stop after this many updates.
    pub max_steps: Option<usize>,
    /// Take a fresh SVRG snapshot before the pass.
    pub refresh_snapshot: bool,
}

impl EpochPlan {
    pub fn new(batch_size: usize, stream: u64, epoch: u64) -> Self {
        EpochPlan { batch_size, stream, epoch, max_steps: None, refresh_snapshot: true }
    }
}

/// One shuffled pass of minibatch updates over `indices`. The final batch
/// may be short.
pub fn run_epoch<T: Scalar, O: Objective<T> + ?Sized>(
    optimizer: &mut Optimizer<T>,
    objective: &O,
    w: &mut ParamSet<T>,
    indices: &[usize],
    plan: &EpochPlan,
) -> Result<EpochStats> {
    let EpochPlan { batch_size, stream, epoch, max_steps, refresh_snapshot } = *plan;
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if indices.is_empty() {
        return Err(Error::Data("no samples to train on".into()));
    }
    let order = shuffled_order(indices, stream, epoch);
    if refresh_snapshot {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        optimizer.begin_epoch(objective, w, &sorted, batch_size, derive(stream, "svrg", epoch))?;
    }
    let mut loss_sum = 0.0;
    let mut stats = EpochStats { mean_loss: f64::NAN, steps: 0, samples: 0 };
    for (b, batch) in order.chunks(batch_size).enumerate() {
        if max_steps.is_some_and(|m| stats.steps >= m) {
            break;
        }
        let eval = optimizer.step(objective, w, batch, batch_seed(stream, epoch, b as u64))?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at epoch {epoch} batch {b}")));
        }
        loss_sum += eval.loss * batch.len() as f64;
        stats.steps += 1;
        stats.samples += batch.len();
    }
    if stats.samples > 0 {
        stats.mean_loss = loss_sum / stats.samples as f64;
    }
    Ok(stats)
}
