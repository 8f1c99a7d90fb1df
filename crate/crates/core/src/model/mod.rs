//! Layer graphs for the backbone, the classification head and their
//! composition, plus parameter storage.

mod build;
mod check;
mod exec;
mod graph;
mod params;

pub use build::{
    build_backbone, build_head, build_variant, inverted_residual, make_divisible, BackboneSpec, BlockRow,
    HeadSpec, InvertedResidualSpec, PoolKind, Variant, MOBILENET_V2_TABLE,
};
pub use check::GradProbe;
pub use exec::{GradSeed, Gradients, Mode, StepOutput, Trace};
pub use graph::{GraphBuilder, ModelGraph, Node, NodeId, Op, SlotKind, SlotSpec};
pub use params::{check_params, count_params, init_params, ParamSet};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture description file: backbone, class count and variant, with
/// an optional explicit head overriding the variant's head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub variant: Variant,
    #[serde(default)]
    pub backbone: BackboneSpec,
    pub num_classes: usize,
    #[serde(default)]
    pub head: Option<HeadSpec>,
}

impl Architecture {
    pub fn build(&self) -> Result<ModelGraph> {
        match &self.head {
            None => build_variant(self.variant, &self.backbone, self.num_classes),
            Some(head) => {
                if head.num_classes != self.num_classes {
                    return Err(Error::Config("head num_classes disagrees with architecture".into()));
                }
                build_backbone(&self.backbone)?.compose(build_head(head)?)
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
