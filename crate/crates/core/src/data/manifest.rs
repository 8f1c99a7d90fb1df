use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::{load_image, preprocess};
use super::split::SplitIndices;
use crate::error::{Error, Result};
use crate::tensor::{read_dmtx, write_dmtx, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub label: usize,
    pub split: SplitName,
}

/// Image list with labels and split assignment. Relative paths resolve
/// against `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub class_names: Vec<String>,
    pub root: PathBuf,
}

impl DatasetManifest {
    /// Reads a `path,label,split` CSV. Class names default to `class<i>`.
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let records = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRecord>, _>>()
            .map_err(|e| Error::Format { path: path.to_path_buf(), detail: e.to_string() })?;
        let k = records.iter().map(|r| r.label + 1).max().unwrap_or(0);
        let manifest = DatasetManifest {
            records,
            class_names: (0..k).map(|c| format!("class{c}")).collect(),
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Labels in range and no image listed twice.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for r in &self.records {
            if r.label >= self.num_classes() {
                return Err(Error::Data(format!("{}: label {} out of range", r.path.display(), r.label)));
            }
            if let Some(prev) = seen.insert(&r.path, r.split) {
                return Err(Error::Data(format!("{} listed twice ({prev:?}, {:?})", r.path.display(), r.split)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.root.join(&record.path)
        }
    }

    /// Loads and preprocesses every image, in manifest order, with split
    /// membership taken from the records.
    pub fn load<T: Scalar>(&self, height: usize, width: usize) -> Result<(Dataset<T>, SplitIndices)> {
        self.validate()?;
        for r in &self.records {
            let p = self.resolve(r);
            if !p.is_file() {
                return Err(Error::Data(format!("missing image {}", p.display())));
            }
        }
        let images = self
            .records
            .par_iter()
            .map(|r| preprocess(&load_image::<T>(&self.resolve(r))?, height, width))
            .collect::<Result<Vec<_>>>()?;
        let mut splits = SplitIndices::default();
        for (i, r) in self.records.iter().enumerate() {
            match r.split {
                SplitName::Train => splits.train.push(i),
                SplitName::Val => splits.val.push(i),
                SplitName::Test => splits.test.push(i),
            }
        }
        let data = Dataset {
            inputs: Tensor::stack(&images)?,
            labels: self.records.iter().map(|r| r.label).collect(),
            num_classes: self.num_classes(),
        };
        Ok((data, splits))
    }
}

/// Preprocessed `[N, H, W, 3]` inputs with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Tensor<T>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.shape().first() != Some(&labels.len()) {
            return Err(Error::Data(format!("{} labels for inputs of shape {:?}", labels.len(), inputs.shape())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Data(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Dataset { inputs, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Dataset {
            inputs: self.inputs.gather(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset { inputs: self.inputs.cast(), labels: self.labels.clone(), num_classes: self.num_classes }
    }

    /// `inputs.dmtx` plus `labels.json` in `dir`.
    pub fn save_cache(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_dmtx(&dir.join("inputs.dmtx"), &self.inputs)?;
        let meta = CacheMeta { labels: self.labels.clone(), num_classes: self.num_classes };
        let path = dir.join("labels.json");
        std::fs::write(&path, serde_json::to_string(&meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load_cache(dir: &Path) -> Result<Self> {
        let path = dir.join("labels.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CacheMeta = serde_json::from_str(&text)?;
        Dataset::new(read_dmtx(&dir.join("inputs.dmtx"))?, meta.labels, meta.num_classes)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    labels: Vec<usize>,
    num_classes: usize,
}
