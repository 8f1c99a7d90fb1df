use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::{ConvMode, ConvSpec};

pub type NodeId = usize;

/// Layer operation carried by a graph node. Parameter slots are referenced
/// by name; values live in a [`ParamSet`](super::ParamSet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Op {
    Input,
    Conv {
        spec: ConvSpec,
        kernel: String,
        bias: Option<String>,
    },
    BatchNorm {
        gamma: String,
        beta: String,
        running_mean: String,
        running_var: String,
        epsilon: f64,
        momentum: f64,
    },
    Relu,
    Dropout {
        p: f64,
    },
    Add,
    GlobalAvgPool,
    GlobalMaxPool,
    Flatten,
    Dense {
        weight: String,
        bias: String,
    },
    Concat,
    Softmax,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv { spec, .. } => match spec.mode {
                ConvMode::Standard => "conv",
                ConvMode::Pointwise => "pointwise_conv",
                ConvMode::Depthwise { .. } => "depthwise_conv",
            },
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu => "relu",
            Op::Dropout { .. } => "dropout",
            Op::Add => "add",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::GlobalMaxPool => "global_max_pool",
            Op::Flatten => "flatten",
            Op::Dense { .. } => "dense",
            Op::Concat => "concat",
            Op::Softmax => "softmax",
        }
    }

    pub fn slots(&self) -> Vec<&str> {
        match self {
            Op::Conv { kernel, bias, .. } => {
                let mut v = vec![kernel.as_str()];
                v.extend(bias.as_deref());
                v
            }
            Op::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } => vec![gamma, beta, running_mean, running_var],
            Op::Dense { weight, bias } => vec![weight, bias],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

/// How a parameter slot is initialized and whether it is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Weight { fan_in: usize },
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl SlotKind {
    pub fn trainable(self) -> bool {
        !matches!(self, SlotKind::RunningMean | SlotKind::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: SlotKind,
}

impl SlotSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Directed acyclic layer graph. Nodes are stored in topological order;
/// node 0 is the single input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    nodes: Vec<Node>,
    slots: Vec<SlotSpec>,
    /// Per-sample output shape of every node.
    shapes: Vec<Vec<usize>>,
    output: NodeId,
}

impl ModelGraph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn slots(&self) -> &[SlotSpec] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.shapes[self.output]
    }

    /// Per-sample output shape of `id`.
    pub fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.shapes[id]
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Number of nodes of each kind whose name starts with `prefix`.
    pub fn census(&self, prefix: &str) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for n in self.nodes.iter().filter(|n| n.name.starts_with(prefix)) {
            *out.entry(n.op.kind()).or_insert(0) += 1;
        }
        out
    }

    pub fn trainable_slots(&self) -> impl Iterator<Item = &SlotSpec> {
        self.slots.iter().filter(|s| s.kind.trainable())
    }

    /// Append `next` after this graph, feeding this graph's output into
    /// `next`'s input node.
    pub fn compose(self, next: ModelGraph) -> Result<ModelGraph> {
        if self.output_shape() != next.input_shape() {
            return Err(Error::shape(
                "compose",
                format!("{:?} feeds {:?}", self.output_shape(), next.input_shape()),
            ));
        }
        let offset = self.nodes.len() - 1;
        let remap = |id: NodeId| if id == 0 { self.output } else { id + offset };
        let mut nodes = self.nodes.clone();
        let mut shapes = self.shapes.clone();
        for (n, s) in next.nodes.iter().zip(&next.shapes).skip(1) {
            nodes.push(Node {
                name: n.name.clone(),
                op: n.op.clone(),
                inputs: n.inputs.iter().map(|&i| remap(i)).collect(),
            });
            shapes.push(s.clone());
        }
        let mut slots = self.slots;
        for s in next.slots {
            if slots.iter().any(|x| x.name == s.name) {
                return Err(Error::InvalidArgument(format!("duplicate slot {}", s.name)));
            }
            slots.push(s);
        }
        let output = remap(next.output);
        Ok(ModelGraph {
            nodes,
            slots,
            shapes,
            output,
        })
    }
}

/// Incremental graph construction with eager shape inference.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    slots: Vec<SlotSpec>,
    shapes: Vec<Vec<usize>>,
}

impl GraphBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        GraphBuilder {
            nodes: vec![Node {
                name: "input".into(),
                op: Op::Input,
                inputs: vec![],
            }],
            slots: Vec::new(),
            shapes: vec![input_shape.to_vec()],
        }
    }

    pub const INPUT: NodeId = 0;

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.shapes[id]
    }

    fn push(&mut self, name: &str, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> Result<NodeId> {
        if self.nodes.iter().any(|n| n.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate node name {name}")));
        }
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs,
        });
        self.shapes.push(shape);
        Ok(self.nodes.len() - 1)
    }

    fn slot(&mut self, name: String, shape: Vec<usize>, kind: SlotKind) -> String {
        self.slots.push(SlotSpec {
            name: name.clone(),
            shape,
            kind,
        });
        name
    }

    fn spatial(&self, op: &'static str, id: NodeId) -> Result<(usize, usize, usize)> {
        match *self.shape(id) {
            [h, w, c] => Ok((h, w, c)),
            ref s => Err(Error::shape(op, format!("expected [H,W,C], got {s:?}"))),
        }
    }

    fn vector(&self, op: &'static str, id: NodeId) -> Result<usize> {
        match *self.shape(id) {
            [d] => Ok(d),
            ref s => Err(Error::shape(op, format!("expected [D], got {s:?}"))),
        }
    }

    pub fn conv(&mut self, name: &str, from: NodeId, spec: ConvSpec, bias: bool) -> Result<NodeId> {
        spec.validate()?;
        let (h, w, c) = self.spatial("conv", from)?;
        if c != spec.in_channels {
            return Err(Error::shape("conv", format!("{name}: {c} channels in, spec wants {}", spec.in_channels)));
        }
        let (oh, ow, _, _) = spec
            .output_geometry(h, w)
            .ok_or_else(|| Error::shape("conv", format!("{name}: input {h}x{w} too small")))?;
        let fan_in = match spec.mode {
            ConvMode::Depthwise { .. } => spec.kernel_size * spec.kernel_size,
            _ => spec.kernel_size * spec.kernel_size * spec.in_channels,
        };
        let kernel = self.slot(format!("{name}/kernel"), spec.kernel_shape(), SlotKind::Weight { fan_in });
        let bias = bias.then(|| self.slot(format!("{name}/bias"), vec![spec.out_channels], SlotKind::Bias));
        self.push(name, Op::Conv { spec, kernel, bias }, vec![from], vec![oh, ow, spec.out_channels])
    }

    pub fn batch_norm(&mut self, name: &str, from: NodeId) -> Result<NodeId> {
        use crate::tensor::ops::{DEFAULT_EPSILON as EPSILON, DEFAULT_MOMENTUM as MOMENTUM};
        let c = *self
            .shape(from)
            .last()
            .ok_or_else(|| Error::shape("batch_norm", "rank 0 input"))?;
        let op = Op::BatchNorm {
            gamma: self.slot(format!("{name}/gamma"), vec![c], SlotKind::Gamma),
            beta: self.slot(format!("{name}/beta"), vec![c], SlotKind::Beta),
            running_mean: self.slot(format!("{name}/running_mean"), vec![c], SlotKind::RunningMean),
            running_var: self.slot(format!("{name}/running_var"), vec![c], SlotKind::RunningVar),
            epsilon: EPSILON,
            momentum: MOMENTUM,
        };
        let shape = self.shape(from).to_vec();
        self.push(name, op, vec![from], shape)
    }

    pub fn relu(&mut self, name: &str, from: NodeId) -> Result<NodeId> {
        let shape = self.shape(from).to_vec();
        self.push(name, Op::Relu, vec![from], shape)
    }

    pub fn dropout(&mut self, name: &str, from: NodeId, p: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("{name}: dropout rate {p} outside [0,1)")));
        }
        let shape = self.shape(from).to_vec();
        self.push(name, Op::Dropout { p }, vec![from], shape)
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", format!("{name}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let shape = self.shape(a).to_vec();
        self.push(name, Op::Add, vec![a, b], shape)
    }

    pub fn global_pool(&mut self, name: &str, from: NodeId, max: bool) -> Result<NodeId> {
        let (_, _, c) = self.spatial("global_pool", from)?;
        let op = if max { Op::GlobalMaxPool } else { Op::GlobalAvgPool };
        self.push(name, op, vec![from], vec![c])
    }

    pub fn flatten(&mut self, name: &str, from: NodeId) -> Result<NodeId> {
        let n = self.shape(from).iter().product();
        self.push(name, Op::Flatten, vec![from], vec![n])
    }

    pub fn dense(&mut self, name: &str, from: NodeId, units: usize) -> Result<NodeId> {
        let d_in = self.vector("dense", from)?;
        if units == 0 {
            return Err(Error::InvalidArgument(format!("{name}: dense layer needs units > 0")));
        }
        let op = Op::Dense {
            weight: self.slot(format!("{name}/weight"), vec![d_in, units], SlotKind::Weight { fan_in: d_in }),
            bias: self.slot(format!("{name}/bias"), vec![units], SlotKind::Bias),
        };
        self.push(name, op, vec![from], vec![units])
    }

    pub fn concat(&mut self, name: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let da = self.vector("concat", a)?;
        let db = self.vector("concat", b)?;
        self.push(name, Op::Concat, vec![a, b], vec![da + db])
    }

    pub fn softmax(&mut self, name: &str, from: NodeId) -> Result<NodeId> {
        let k = self.vector("softmax", from)?;
        self.push(name, Op::Softmax, vec![from], vec![k])
    }

    pub fn finish(self, output: NodeId) -> ModelGraph {
        ModelGraph {
            nodes: self.nodes,
            slots: self.slots,
            shapes: self.shapes,
            output,
        }
    }
}
