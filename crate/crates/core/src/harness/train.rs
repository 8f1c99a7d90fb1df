use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, probability_rows, MetricsReport};
use super::schedule::{LrReduce, Schedule};
use crate::error::{Error, Result};
use crate::federated::client_stream;
use crate::model::{Mode, ModelGraph, ParamSet};
use crate::optim::{reduce_lr, run_epoch, EpochPlan, EpochStats, ModelObjective, Optimizer, OptimizerConfig};
use crate::tensor::{Scalar, Tensor};

/// Element type of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision {other:?}, expected f32 or f64"))),
        }
    }
}

fn default_max_epochs() -> usize {
    50
}

fn default_batch() -> usize {
    32
}

fn default_patience() -> usize {
    15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub lr_reduce: LrReduce,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: default_max_epochs(),
            batch_size: default_batch(),
            patience: default_patience(),
            lr_reduce: LrReduce::default(),
            seed: 0,
            optimizer: OptimizerConfig::default(),
            precision: Precision::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Schedule::new(self.patience, self.lr_reduce)?;
        self.optimizer.validate()
    }
}

/// One row of the epoch history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub improved: bool,
    /// The learning rate was reduced after this epoch.
    pub reduced_lr: bool,
    pub stopped: bool,
}

/// Best weights seen so far. Epoch 0 stands for the initial weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord<T> {
    pub epoch: usize,
    pub val_accuracy: Option<f64>,
    pub weights: ParamSet<T>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    epoch: usize,
    val_accuracy: Option<f64>,
}

impl<T: Scalar> CheckpointRecord<T> {
    /// Writes the weights in the parameter directory format plus a
    /// `checkpoint.json` with the epoch and accuracy.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.weights.save(dir)?;
        let meta = CheckpointMeta { epoch: self.epoch, val_accuracy: self.val_accuracy };
        let path = dir.join("checkpoint.json");
        std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("checkpoint.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        Ok(CheckpointRecord { epoch: meta.epoch, val_accuracy: meta.val_accuracy, weights: ParamSet::load(dir)? })
    }
}

/// What the training loop needs from a problem: one pass of updates and a
/// validation accuracy.
pub trait TrainTask<T: Scalar> {
    /// Epoch `epoch` is 0-based.
    fn train_epoch(&mut self, optimizer: &mut Optimizer<T>, w: &mut ParamSet<T>, epoch: u64) -> Result<EpochStats>;

    fn validate(&mut self, w: &ParamSet<T>) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best: CheckpointRecord<T>,
    pub history: Vec<EpochRecord>,
    /// Weights after the last epoch run.
    pub last: ParamSet<T>,
}

/// The scheduled training loop: train, validate, checkpoint on strict
/// improvement, divide the learning rate, stop early.
pub fn train<T: Scalar, K: TrainTask<T> + ?Sized>(
    task: &mut K,
    initial: ParamSet<T>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let mut schedule = Schedule::new(config.patience, config.lr_reduce)?;
    let mut optimizer = config.optimizer.build::<T>()?;
    let mut best = CheckpointRecord { epoch: 0, val_accuracy: None, weights: initial.clone() };
    let mut w = initial;
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs {
        let lr = optimizer.lr();
        let stats = task.train_epoch(&mut optimizer, &mut w, epoch as u64 - 1)?;
        let val_accuracy = task.validate(&w)?;
        if !val_accuracy.is_finite() {
            return Err(Error::NonFinite(format!("validation accuracy at epoch {epoch}")));
        }
        let decision = schedule.observe(val_accuracy);
        if decision.improved {
            best = CheckpointRecord { epoch, val_accuracy: Some(val_accuracy), weights: w.clone() };
        }
        if decision.reduce_lr {
            optimizer.set_lr(reduce_lr(lr, config.lr_reduce.factor)?);
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: stats.mean_loss,
            val_accuracy,
            improved: decision.improved,
            reduced_lr: decision.reduce_lr,
            stopped: decision.stop,
        });
        if decision.stop {
            break;
        }
    }
    Ok(TrainOutcome { best, history, last: w })
}

/// Writes the epoch history as CSV with a header row.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inputs and labels of one split.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a, T> {
    pub inputs: &'a Tensor<T>,
    pub labels: &'a [usize],
}

impl<'a, T: Scalar> Split<'a, T> {
    pub fn new(inputs: &'a Tensor<T>, labels: &'a [usize]) -> Result<Self> {
        if inputs.shape().first() != Some(&labels.len()) {
            return Err(Error::Data(format!("{} labels for inputs of shape {:?}", labels.len(), inputs.shape())));
        }
        if labels.is_empty() {
            return Err(Error::Data("empty split".into()));
        }
        Ok(Split { inputs, labels })
    }
}

const EVAL_CHUNK: usize = 64;

/// Eval-mode class probabilities of a split, in sample order.
pub fn predict<T: Scalar>(graph: &ModelGraph, w: &ParamSet<T>, inputs: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
    let n = inputs.shape().first().copied().unwrap_or(0);
    let starts: Vec<usize> = (0..n).step_by(EVAL_CHUNK).collect();
    let chunks = starts
        .par_iter()
        .map(|&s| {
            let idx: Vec<usize> = (s..(s + EVAL_CHUNK).min(n)).collect();
            let out = graph.forward(w, &inputs.gather(&idx)?, Mode::Eval)?;
            probability_rows(&out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Eval-mode forward over a split followed by [`compute_metrics`].
pub fn evaluate<T: Scalar>(graph: &ModelGraph, w: &ParamSet<T>, split: Split<'_, T>) -> Result<MetricsReport> {
    compute_metrics(&predict(graph, w, split.inputs)?, split.labels)
}

/// Minibatch training of a model graph on an in-memory train split, scored
/// by accuracy on a validation split.
pub struct ModelTask<'a, T> {
    graph: &'a ModelGraph,
    objective: ModelObjective<'a, T>,
    train_indices: Vec<usize>,
    val: Split<'a, T>,
    batch_size: usize,
    stream: u64,
}

impl<'a, T: Scalar> ModelTask<'a, T> {
    /// Shuffling and dropout follow client 0's stream for `seed`.
    pub fn new(graph: &'a ModelGraph, train: Split<'a, T>, val: Split<'a, T>, batch_size: usize, seed: u64) -> Result<Self> {
        Ok(ModelTask {
            graph,
            objective: ModelObjective::new(graph, train.inputs, train.labels)?,
            train_indices: (0..train.labels.len()).collect(),
            val,
            batch_size,
            stream: client_stream(seed, 0),
        })
    }
}

impl<T: Scalar> TrainTask<T> for ModelTask<'_, T> {
    fn train_epoch(&mut self, optimizer: &mut Optimizer<T>, w: &mut ParamSet<T>, epoch: u64) -> Result<EpochStats> {
        let plan = EpochPlan::new(self.batch_size, self.stream, epoch);
        run_epoch(optimizer, &self.objective, w, &self.train_indices, &plan)
    }

    fn validate(&mut self, w: &ParamSet<T>) -> Result<f64> {
        Ok(evaluate(self.graph, w, self.val)?.accuracy)
    }
}
