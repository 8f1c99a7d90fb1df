//! End-to-end finite-difference check of a model's loss gradient.

use super::{build_variant, init_params, BackboneSpec, Mode, ModelGraph, ParamSet, SlotKind, Variant};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::gradcheck::{check_gradient_with_step, GradCheckReport, FD_STEP};
use crate::tensor::Tensor;

/// A model, parameters, a random batch and labels for gradient checking.
///
/// BN parameters and running statistics are drawn at random rather than left
/// at their init values: at init every BN in eval mode is the identity, and
/// channels that are zero everywhere land exactly on a ReLU kink.
#[derive(Debug, Clone)]
pub struct GradProbe {
    pub graph: ModelGraph,
    pub params: ParamSet<f64>,
    pub batch: Tensor<f64>,
    pub labels: Vec<usize>,
    pub seed: u64,
}

impl GradProbe {
    pub fn new(graph: ModelGraph, batch_size: usize, seed: u64) -> Self {
        let mut params = init_params(&graph, seed);
        let mut r = Rng::derived(seed, "probe/norm", 0);
        for slot in graph.slots() {
            let (lo, hi) = match slot.kind {
                SlotKind::Gamma | SlotKind::RunningVar => (0.5, 1.5),
                SlotKind::Beta | SlotKind::RunningMean => (-0.3, 0.3),
                _ => continue,
            };
            let t = params.get_mut(&slot.name).expect("init covers every slot");
            t.data_mut().iter_mut().for_each(|v| *v = r.uniform(lo, hi));
        }
        let mut shape = vec![batch_size];
        shape.extend_from_slice(graph.input_shape());
        let n: usize = shape.iter().product();
        let mut r = Rng::derived(seed, "probe/batch", 0);
        let batch = Tensor::new(shape, (0..n).map(|_| r.next_f64()).collect()).expect("sized");
        let k = graph.output_shape()[0];
        let labels = (0..batch_size).map(|i| i % k).collect();
        GradProbe { graph, params, batch, labels, seed }
    }

    /// The first probe in `seeds` whose eval-mode ReLU inputs all stay at
    /// least `margin` away from zero, so central differences never straddle
    /// a kink.
    pub fn with_margin(graph: &ModelGraph, batch_size: usize, seeds: std::ops::Range<u64>, margin: f64) -> Result<Self> {
        for seed in seeds.clone() {
            let probe = GradProbe::new(graph.clone(), batch_size, seed);
            if probe.relu_margin(Mode::Eval)? >= margin {
                return Ok(probe);
            }
        }
        Err(Error::InvalidArgument(format!("no seed in {seeds:?} keeps ReLU inputs {margin} from zero")))
    }

    /// Tiny desk-scale variant probe: 8x8x3 input, width 0.25, two classes.
    pub fn tiny(variant: Variant, batch_size: usize, margin: f64) -> Result<Self> {
        let graph = build_variant(variant, &BackboneSpec::with_width(0.25, [8, 8, 3]), 2)?;
        GradProbe::with_margin(&graph, batch_size, 0..64, margin)
    }

    /// Smallest |input| over every ReLU in the graph.
    pub fn relu_margin(&self, mode: Mode) -> Result<f64> {
        let trace = self.graph.forward_trace(&self.params, &self.batch, mode)?;
        let mut m = f64::INFINITY;
        for node in self.graph.nodes() {
            if node.op.kind() == "relu" {
                for v in trace.value(node.inputs[0]).data() {
                    m = m.min(v.abs());
                }
            }
        }
        Ok(m)
    }

    /// Check `per_slot` sampled coordinates of every trainable slot (all
    /// coordinates when the slot is smaller) against central differences.
    pub fn check(&self, mode: Mode, per_slot: usize, tolerance: f64, step: f64) -> Result<GradCheckReport> {
        let grads = self.graph.loss_and_grad_mode(&self.params, &self.batch, &self.labels, mode)?.grads;
        let mut r = Rng::derived(self.seed, "probe/coords", 0);
        let mut report = GradCheckReport::empty(tolerance);
        let mut failed = None;
        let mut scratch = self.params.clone();
        for slot in self.graph.trainable_slots() {
            let base = self.params.require(&slot.name)?;
            let analytic = grads.require(&slot.name)?;
            let coords: Vec<usize> = if base.len() <= per_slot {
                (0..base.len()).collect()
            } else {
                (0..per_slot).map(|_| r.below(base.len() as u64) as usize).collect()
            };
            let f = |v: &[f64]| {
                scratch.get_mut(&slot.name).expect("slot exists").data_mut().copy_from_slice(v);
                self.graph.loss(&scratch, &self.batch, &self.labels, mode).unwrap_or_else(|e| {
                    failed.get_or_insert(e);
                    f64::NAN
                })
            };
            report = report.merge(check_gradient_with_step(f, base.data(), analytic.data(), Some(&coords), tolerance, step));
            scratch.get_mut(&slot.name).expect("slot exists").data_mut().copy_from_slice(base.data());
        }
        match failed {
            Some(e) => Err(e),
            None => Ok(report),
        }
    }

    /// [`GradProbe::check`] at the default step.
    pub fn check_default(&self, mode: Mode, per_slot: usize, tolerance: f64) -> Result<GradCheckReport> {
        self.check(mode, per_slot, tolerance, FD_STEP)
    }
}
