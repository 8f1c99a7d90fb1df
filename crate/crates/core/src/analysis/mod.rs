//! Static cost accounting and the input-space pullback metric.

mod cost;
mod geometry;

pub use cost::{count_flops, CostReport, CostRow, FLOP_CONVENTION};
pub use geometry::{
    gram, jacobian, metric_form, pullback_metric, top_eigenpairs, Eigenpair, PullbackMetric, Spectrum,
    POWER_MAX_ITERS, POWER_TOLERANCE,
};

#[cfg(test)]
mod tests;
