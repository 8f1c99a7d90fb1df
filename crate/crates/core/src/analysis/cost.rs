use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelGraph, Op};
use crate::tensor::ops::ConvMode;

/// Counting rules applied by [`count_flops`].
pub const FLOP_CONVENTION: &str = "per-sample inference; multiply-add = 2 FLOPs; conv 2*K^2*C_in*H_out*W_out*C_out \
(depthwise without the C_in factor) plus one add per output when biased; dense 2*d_in*d_out + d_out; \
batch norm 4/element; relu and add 1/element; global pooling H*W per channel; softmax 3k-1; \
dropout, flatten and concat free";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub name: String,
    pub kind: String,
    /// Per-sample output shape, dimensions joined with `x`.
    pub output_shape: String,
    pub flops: u64,
    /// Trainable parameters owned by the node.
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_flops: u64,
    pub total_params: u64,
    pub convention: String,
}

fn node_flops(graph: &ModelGraph, id: usize) -> u64 {
    let node = graph.node(id);
    let out: u64 = graph.shape_of(id).iter().product::<usize>() as u64;
    let input = |k: usize| graph.shape_of(node.inputs[k]);
    match &node.op {
        Op::Conv { spec, bias, .. } => {
            let k2 = (spec.kernel_size * spec.kernel_size) as u64;
            let per_output = match spec.mode {
                ConvMode::Depthwise { .. } => k2,
                ConvMode::Standard | ConvMode::Pointwise => k2 * spec.in_channels as u64,
            };
            2 * per_output * out + if bias.is_some() { out } else { 0 }
        }
        Op::Dense { .. } => {
            let d_in = input(0).iter().product::<usize>() as u64;
            2 * d_in * out + out
        }
        Op::BatchNorm { .. } => 4 * out,
        Op::Relu | Op::Add => out,
        Op::GlobalAvgPool | Op::GlobalMaxPool => input(0).iter().product::<usize>() as u64,
        Op::Softmax => 3 * out - 1,
        Op::Input | Op::Dropout { .. } | Op::Flatten | Op::Concat => 0,
    }
}

/// Static per-sample forward cost of every node of `graph`.
pub fn count_flops(graph: &ModelGraph) -> CostReport {
    let mut rows = Vec::with_capacity(graph.nodes().len());
    for (id, node) in graph.nodes().iter().enumerate() {
        let params = node
            .op
            .slots()
            .iter()
            .filter_map(|s| graph.slot(s))
            .filter(|s| s.kind.trainable())
            .map(|s| s.numel() as u64)
            .sum();
        rows.push(CostRow {
            name: node.name.clone(),
            kind: node.op.kind().to_string(),
            output_shape: graph.shape_of(id).iter().map(usize::to_string).collect::<Vec<_>>().join("x"),
            flops: node_flops(graph, id),
            params,
        });
    }
    CostReport {
        total_flops: rows.iter().map(|r| r.flops).sum(),
        total_params: rows.iter().map(|r| r.params).sum(),
        rows,
        convention: FLOP_CONVENTION.to_string(),
    }
}

impl CostReport {
    pub fn gflops(&self) -> f64 {
        self.total_flops as f64 / 1e9
    }

    /// Rows plus a final `total` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.serialize(CostRow {
            name: "total".into(),
            kind: String::new(),
            output_shape: String::new(),
            flops: self.total_flops,
            params: self.total_params,
        })?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        let kind_w = self.rows.iter().map(|r| r.kind.len()).max().unwrap_or(4).max(4);
        let shape_w = self.rows.iter().map(|r| r.output_shape.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<name_w$}  {:<kind_w$}  {:>shape_w$}  {:>14}  {:>10}", "layer", "kind", "shape", "flops", "params")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<name_w$}  {:<kind_w$}  {:>shape_w$}  {:>14}  {:>10}",
                r.name, r.kind, r.output_shape, r.flops, r.params
            )?;
        }
        writeln!(f, "{:<name_w$}  {:<kind_w$}  {:>shape_w$}  {:>14}  {:>10}", "total", "", "", self.total_flops, self.total_params)?;
        writeln!(f, "{:.4} GFLOPs per sample", self.gflops())?;
        write!(f, "convention: {}", self.convention)
    }
}
