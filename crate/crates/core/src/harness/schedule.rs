use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Divide the learning rate by `factor` after `window` epochs without
/// improvement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrReduce {
    pub factor: f64,
    pub window: usize,
}

impl Default for LrReduce {
    fn default() -> Self {
        LrReduce { factor: 3.0, window: 3 }
    }
}

/// What the schedule decided after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Decision {
    pub improved: bool,
    pub reduce_lr: bool,
    pub stop: bool,
}

/// Validation-accuracy driven schedule: checkpoint on strict improvement,
/// reduce the learning rate after `window` flat epochs (then start counting
/// again), stop after `patience` flat epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    patience: usize,
    reduce: LrReduce,
    best: Option<f64>,
    since_best: usize,
    since_reduce: usize,
}

impl Schedule {
    pub fn new(patience: usize, reduce: LrReduce) -> Result<Self> {
        if reduce.window == 0 || patience < reduce.window {
            return Err(Error::Config(format!(
                "need patience >= window >= 1, got patience {patience}, window {}",
                reduce.window
            )));
        }
        if !(reduce.factor > 1.0 && reduce.factor.is_finite()) {
            return Err(Error::Config(format!("lr reduction factor must exceed 1, got {}", reduce.factor)));
        }
        Ok(Schedule { patience, reduce, best: None, since_best: 0, since_reduce: 0 })
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, val_accuracy: f64) -> Decision {
        if self.best.is_none_or(|b| val_accuracy > b) {
            self.best = Some(val_accuracy);
            self.since_best = 0;
            self.since_reduce = 0;
            return Decision { improved: true, ..Decision::default() };
        }
        self.since_best += 1;
        self.since_reduce += 1;
        if self.since_best >= self.patience {
            return Decision { stop: true, ..Decision::default() };
        }
        if self.since_reduce >= self.reduce.window {
            self.since_reduce = 0;
            return Decision { reduce_lr: true, ..Decision::default() };
        }
        Decision::default()
    }
}
