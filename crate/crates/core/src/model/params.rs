use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{ModelGraph, SlotKind};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{read_dmtx, write_dmtx, Scalar, Tensor};

/// Ordered map from parameter-slot name to value. This is the unit that
/// clients and the server exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ParamSet<T> {
    slots: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet { slots: BTreeMap::new() }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Option<Tensor<T>> {
        self.slots.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.slots.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.slots.get_mut(name)
    }

    /// Lookup that reports the missing slot by name.
    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.slots
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter slot {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.slots.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.slots.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.slots.keys()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.slots.values().map(Tensor::len).sum()
    }

    /// Overwrite (or add) every slot present in `other`.
    pub fn update_from(&mut self, other: &ParamSet<T>) {
        for (k, v) in &other.slots {
            self.slots.insert(k.clone(), v.clone());
        }
    }

    /// True when both sets have identical slot names and shapes.
    pub fn same_layout(&self, other: &ParamSet<T>) -> bool {
        self.slots.len() == other.slots.len()
            && self
                .slots
                .iter()
                .zip(&other.slots)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            slots: self.slots.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Euclidean distance over all slots, accumulated in f64.
    pub fn distance(&self, other: &ParamSet<T>) -> Result<f64> {
        if !self.same_layout(other) {
            return Err(Error::shape("ParamSet::distance", "layouts differ"));
        }
        let mut acc = 0.0f64;
        for (a, b) in self.slots.values().zip(other.slots.values()) {
            for (&x, &y) in a.data().iter().zip(b.data()) {
                let d = (x - y).to_f64().unwrap_or(f64::NAN);
                acc += d * d;
            }
        }
        Ok(acc.sqrt())
    }

    /// All values flattened in slot order.
    pub fn flatten(&self) -> Vec<T> {
        self.slots.values().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slots.values().all(Tensor::is_finite)
    }

    /// Write one DMTX file per slot plus `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.slots.len());
        for (i, (name, t)) in self.slots.iter().enumerate() {
            let file = format!("{i:04}_{}.dmtx", name.replace(['/', '.'], "_"));
            write_dmtx(&dir.join(&file), t)?;
            entries.push(ManifestEntry {
                name: name.clone(),
                file,
                shape: t.shape().to_vec(),
                dtype: T::DTYPE.name().to_string(),
            });
        }
        let manifest = CheckpointManifest { slots: entries };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        let mut out = ParamSet::new();
        for e in manifest.slots {
            let file = dir.join(&e.file);
            let t: Tensor<T> = read_dmtx(&file)?;
            if t.shape() != e.shape {
                return Err(Error::Format {
                    path: file,
                    detail: format!("shape {:?} disagrees with manifest {:?}", t.shape(), e.shape),
                });
            }
            out.insert(e.name, t);
        }
        Ok(out)
    }
}

impl<T: Scalar> FromIterator<(String, Tensor<T>)> for ParamSet<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        ParamSet {
            slots: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    slots: Vec<ManifestEntry>,
}

/// He-uniform weights, zero biases/betas/means, unit gammas/variances.
/// Each slot draws from its own stream derived from `(seed, slot name)`.
pub fn init_params<T: Scalar>(graph: &ModelGraph, seed: u64) -> ParamSet<T> {
    let mut out = ParamSet::new();
    for slot in graph.slots() {
        let t = match slot.kind {
            SlotKind::Weight { fan_in } => {
                let limit = (6.0 / fan_in.max(1) as f64).sqrt();
                let mut rng = Rng::derived(seed, &slot.name, 0);
                let data = (0..slot.numel()).map(|_| T::lit(rng.uniform(-limit, limit))).collect();
                Tensor::new(slot.shape.clone(), data).expect("slot shape")
            }
            SlotKind::Bias | SlotKind::Beta | SlotKind::RunningMean => Tensor::zeros(&slot.shape),
            SlotKind::Gamma | SlotKind::RunningVar => Tensor::ones(&slot.shape),
        };
        out.insert(slot.name.clone(), t);
    }
    out
}

/// Number of trainable scalars (running statistics excluded).
pub fn count_params(graph: &ModelGraph) -> usize {
    graph.trainable_slots().map(|s| s.numel()).sum()
}

/// Error unless `params` provides every slot of `graph` with the right shape.
pub fn check_params<T: Scalar>(graph: &ModelGraph, params: &ParamSet<T>) -> Result<()> {
    for slot in graph.slots() {
        let t = params.require(&slot.name)?;
        if t.shape() != slot.shape {
            return Err(Error::shape(
                "check_params",
                format!("{}: {:?} vs {:?}", slot.name, t.shape(), slot.shape),
            ));
        }
    }
    Ok(())
}
