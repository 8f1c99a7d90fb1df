//! Backbone, classification head and ablation variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::{GraphBuilder, ModelGraph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::ops::{ConvSpec, Padding};

/// One row of the inverted-residual table: expansion `t`, output channels
/// `c`, repeat count `n` and first-block stride `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRow {
    pub t: usize,
    pub c: usize,
    pub n: usize,
    pub s: usize,
}

/// The published MobileNetV2 block table (17 inverted-residual blocks).
pub const MOBILENET_V2_TABLE: [BlockRow; 7] = [
    BlockRow { t: 1, c: 16, n: 1, s: 1 },
    BlockRow { t: 6, c: 24, n: 2, s: 2 },
    BlockRow { t: 6, c: 32, n: 3, s: 2 },
    BlockRow { t: 6, c: 64, n: 4, s: 2 },
    BlockRow { t: 6, c: 96, n: 3, s: 1 },
    BlockRow { t: 6, c: 160, n: 3, s: 2 },
    BlockRow { t: 6, c: 320, n: 1, s: 1 },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSpec {
    pub width_multiplier: f64,
    /// `[H, W, C]` of the input image.
    pub input_size: [usize; 3],
    pub stem_channels: usize,
    pub last_channels: usize,
    pub blocks: Vec<BlockRow>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            width_multiplier: 1.0,
            input_size: [224, 224, 3],
            stem_channels: 32,
            last_channels: 1280,
            blocks: MOBILENET_V2_TABLE.to_vec(),
        }
    }
}

/// Round `v` to the nearest multiple of 8, never below 8 and never more
/// than 10% under `v`.
pub fn make_divisible(v: f64) -> usize {
    const DIVISOR: usize = 8;
    let rounded = ((v + DIVISOR as f64 / 2.0) as usize / DIVISOR * DIVISOR).max(DIVISOR);
    if (rounded as f64) < 0.9 * v {
        rounded + DIVISOR
    } else {
        rounded
    }
}

impl BackboneSpec {
    pub fn with_width(width_multiplier: f64, input: [usize; 3]) -> Self {
        BackboneSpec {
            width_multiplier,
            input_size: input,
            ..Default::default()
        }
    }

    pub fn scaled(&self, channels: usize) -> usize {
        make_divisible(channels as f64 * self.width_multiplier)
    }

    /// Channel count of the final 1×1 convolution (`d`).
    pub fn feature_dim(&self) -> usize {
        if self.width_multiplier > 1.0 {
            self.scaled(self.last_channels)
        } else {
            self.last_channels
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("backbone: {m}")));
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return bad(format!("width multiplier {} must be positive", self.width_multiplier));
        }
        if self.input_size.contains(&0) {
            return bad(format!("input size {:?} must be positive", self.input_size));
        }
        if self.blocks.is_empty() {
            return bad("empty block table".into());
        }
        for r in &self.blocks {
            if r.t == 0 || r.c == 0 || r.n == 0 || !(r.s == 1 || r.s == 2) {
                return bad(format!("invalid block row {r:?}"));
            }
        }
        Ok(())
    }
}

/// Expansion, depthwise and linear projection stages of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvertedResidualSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expansion: usize,
    pub stride: usize,
}

impl InvertedResidualSpec {
    pub fn has_residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn expanded_channels(&self) -> usize {
        self.in_channels * self.expansion
    }
}

fn conv_bn_relu(g: &mut GraphBuilder, name: &str, from: NodeId, spec: ConvSpec, relu: bool) -> Result<NodeId> {
    let c = g.conv(&format!("{name}/conv"), from, spec, false)?;
    let b = g.batch_norm(&format!("{name}/bn"), c)?;
    if relu {
        g.relu(&format!("{name}/relu"), b)
    } else {
        Ok(b)
    }
}

/// Append one inverted-residual block. With `expansion == 1` the 1×1
/// expansion stage is omitted, as in the reference network.
pub fn inverted_residual(g: &mut GraphBuilder, name: &str, from: NodeId, spec: InvertedResidualSpec) -> Result<NodeId> {
    if spec.expansion == 0 || !(spec.stride == 1 || spec.stride == 2) {
        return Err(Error::Config(format!("{name}: invalid block {spec:?}")));
    }
    let hidden = spec.expanded_channels();
    let mut x = from;
    if spec.expansion != 1 {
        x = conv_bn_relu(g, &format!("{name}/expand"), x, ConvSpec::pointwise(spec.in_channels, hidden), true)?;
    }
    x = conv_bn_relu(
        g,
        &format!("{name}/depthwise"),
        x,
        ConvSpec::depthwise(3, spec.stride, Padding::Same, hidden),
        true,
    )?;
    x = conv_bn_relu(g, &format!("{name}/project"), x, ConvSpec::pointwise(hidden, spec.out_channels), false)?;
    if spec.has_residual() {
        x = g.add(&format!("{name}/add"), x, from)?;
    }
    Ok(x)
}

/// Stem convolution, the inverted-residual stack and the final 1×1
/// convolution. Output is the `[h, w, d]` feature map.
pub fn build_backbone(spec: &BackboneSpec) -> Result<ModelGraph> {
    spec.validate()?;
    let mut g = GraphBuilder::new(&spec.input_size);
    let stem = spec.scaled(spec.stem_channels);
    let mut x = conv_bn_relu(
        &mut g,
        "backbone/stem",
        GraphBuilder::INPUT,
        ConvSpec::standard(3, 2, Padding::Same, spec.input_size[2], stem),
        true,
    )?;
    let mut channels = stem;
    let mut index = 0;
    for row in &spec.blocks {
        let out = spec.scaled(row.c);
        for i in 0..row.n {
            let block = InvertedResidualSpec {
                in_channels: channels,
                out_channels: out,
                expansion: row.t,
                stride: if i == 0 { row.s } else { 1 },
            };
            x = inverted_residual(&mut g, &format!("backbone/block{index:02}"), x, block)?;
            channels = out;
            index += 1;
        }
    }
    x = conv_bn_relu(
        &mut g,
        "backbone/head_conv",
        x,
        ConvSpec::pointwise(channels, spec.feature_dim()),
        true,
    )?;
    Ok(g.finish(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Avg,
    Max,
}

/// Classification head attached to the backbone feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub feature_dim: usize,
    /// Spatial size of the incoming feature map.
    pub feature_hw: [usize; 2],
    pub num_classes: usize,
    pub drop_rate: f64,
    pub hidden_sizes: [usize; 3],
    pub skip_connection: bool,
    pub dropout_modules: bool,
    pub pool: PoolKind,
}

impl HeadSpec {
    pub fn new(feature_dim: usize, feature_hw: [usize; 2], num_classes: usize) -> Self {
        HeadSpec {
            feature_dim,
            feature_hw,
            num_classes,
            drop_rate: 0.4,
            hidden_sizes: [64, 32, 16],
            skip_connection: true,
            dropout_modules: true,
            pool: PoolKind::Avg,
        }
    }

    /// Width of the vector entering the third dense layer.
    pub fn concat_width(&self) -> usize {
        if self.skip_connection {
            self.hidden_sizes[1] + self.feature_dim
        } else {
            self.hidden_sizes[1]
        }
    }
}

/// Build the head:
///
/// ```text
/// drop → pool → flatten ─┬─ drop → dense+relu → bn → drop → dense+relu → bn ─┐
///                        └──────────────────────── skip ─────────────────────┴─ concat
///   → drop → dense+relu → bn → drop → dense(k) → softmax
/// ```
///
/// Without `skip_connection` the concat and skip path disappear. Without
/// `dropout_modules` every dropout and batch-norm node disappears.
pub fn build_head(spec: &HeadSpec) -> Result<ModelGraph> {
    if spec.feature_dim == 0 || spec.num_classes < 2 {
        return Err(Error::Config(format!(
            "head needs feature_dim >= 1 and num_classes >= 2, got {} and {}",
            spec.feature_dim, spec.num_classes
        )));
    }
    if spec.hidden_sizes.contains(&0) || spec.feature_hw.contains(&0) {
        return Err(Error::Config(format!("invalid head spec {spec:?}")));
    }
    let [h, w] = spec.feature_hw;
    let mut g = GraphBuilder::new(&[h, w, spec.feature_dim]);
    let p = spec.drop_rate;
    let reg = spec.dropout_modules;
    let drop = |g: &mut GraphBuilder, name: &str, x: NodeId| -> Result<NodeId> {
        if reg {
            g.dropout(name, x, p)
        } else {
            Ok(x)
        }
    };
    let dense_block = |g: &mut GraphBuilder, name: &str, x: NodeId, units: usize| -> Result<NodeId> {
        let d = g.dense(&format!("head/{name}"), x, units)?;
        let r = g.relu(&format!("head/{name}_relu"), d)?;
        Ok(r)
    };
    let bn = |g: &mut GraphBuilder, name: &str, x: NodeId| -> Result<NodeId> {
        if reg {
            g.batch_norm(name, x)
        } else {
            Ok(x)
        }
    };

    let x = drop(&mut g, "head/drop1", GraphBuilder::INPUT)?;
    let x = g.global_pool("head/pool", x, spec.pool == PoolKind::Max)?;
    let flat = g.flatten("head/flatten", x)?;

    let a = drop(&mut g, "head/drop2", flat)?;
    let a = dense_block(&mut g, "dense1", a, spec.hidden_sizes[0])?;
    let a = bn(&mut g, "head/bn1", a)?;
    let a = drop(&mut g, "head/drop3", a)?;
    let a = dense_block(&mut g, "dense2", a, spec.hidden_sizes[1])?;
    let a = bn(&mut g, "head/bn2", a)?;

    let x = if spec.skip_connection {
        g.concat("head/concat", a, flat)?
    } else {
        a
    };
    let x = drop(&mut g, "head/drop4", x)?;
    let x = dense_block(&mut g, "dense3", x, spec.hidden_sizes[2])?;
    let x = bn(&mut g, "head/bn3", x)?;
    let x = drop(&mut g, "head/drop5", x)?;
    let x = g.dense("head/dense4", x, spec.num_classes)?;
    let out = g.softmax("head/softmax", x)?;
    Ok(g.finish(out))
}

/// The proposed model and its eight ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "deepmedix", alias = "DeepMediX")]
    DeepMediX,
    #[serde(rename = "model1")]
    Model1,
    #[serde(rename = "model2")]
    Model2,
    #[serde(rename = "model3")]
    Model3,
    #[serde(rename = "model4")]
    Model4,
    #[serde(rename = "model5")]
    Model5,
    #[serde(rename = "model6")]
    Model6,
    #[serde(rename = "model7")]
    Model7,
    #[serde(rename = "model8")]
    Model8,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::DeepMediX,
        Variant::Model1,
        Variant::Model2,
        Variant::Model3,
        Variant::Model4,
        Variant::Model5,
        Variant::Model6,
        Variant::Model7,
        Variant::Model8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DeepMediX => "deepmedix",
            Variant::Model1 => "model1",
            Variant::Model2 => "model2",
            Variant::Model3 => "model3",
            Variant::Model4 => "model4",
            Variant::Model5 => "model5",
            Variant::Model6 => "model6",
            Variant::Model7 => "model7",
            Variant::Model8 => "model8",
        }
    }

    /// Head configuration realizing this variant.
    pub fn head_spec(self, feature_dim: usize, feature_hw: [usize; 2], num_classes: usize) -> HeadSpec {
        let mut h = HeadSpec::new(feature_dim, feature_hw, num_classes);
        let wide = matches!(self, Variant::Model5 | Variant::Model6 | Variant::Model7 | Variant::Model8);
        if wide {
            h.hidden_sizes = [256, 256, 256];
        }
        match self {
            Variant::DeepMediX | Variant::Model5 => {}
            Variant::Model1 => h.pool = PoolKind::Max,
            Variant::Model2 | Variant::Model6 => h.skip_connection = false,
            Variant::Model3 | Variant::Model7 => h.dropout_modules = false,
            Variant::Model4 | Variant::Model8 => {
                h.skip_connection = false;
                h.dropout_modules = false;
            }
        }
        h
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace(['-', '_'], "");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Backbone composed with the head for `variant`.
pub fn build_variant(variant: Variant, backbone: &BackboneSpec, num_classes: usize) -> Result<ModelGraph> {
    let base = build_backbone(backbone)?;
    let [h, w, d] = match *base.output_shape() {
        [h, w, d] => [h, w, d],
        ref s => return Err(Error::shape("build_variant", format!("backbone output {s:?}"))),
    };
    let head = build_head(&variant.head_spec(d, [h, w], num_classes))?;
    base.compose(head)
}
