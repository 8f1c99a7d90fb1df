//! Losses, update rules and the minibatch epoch driver shared by the
//! centralized and federated training loops.

mod driver;
pub mod loss;
mod objective;
mod rules;

pub use driver::{batch_seed, run_epoch, shuffled_order, EpochPlan, EpochStats};
pub use objective::{Evaluation, ModelObjective, Objective, QuadraticObjective};
pub use rules::{
    adam_step, reduce_lr, sgd_step, svrg_prepare, svrg_step, AdamState, Optimizer, OptimizerConfig,
    OptimizerKind, SvrgState,
};

#[cfg(test)]
mod tests;
