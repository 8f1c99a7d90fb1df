use std::path::{Path, PathBuf};

use mednet_core::data::SyntheticSpec;
use mednet_core::federated::FederatedConfig;
use mednet_core::harness::{Precision, TrainConfig};
use mednet_core::model::{BackboneSpec, Variant};
use mednet_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable that overrides the output directory of a run.
pub const OUT_ENV: &str = "MEDNET_OUT";

/// Largest flattened input accepted by `analyze`; the pullback metric is
/// dense in the input dimension.
pub const MAX_ANALYZE_DIM: usize = 4096;

fn default_width() -> f64 {
    1.0
}

fn default_input() -> [usize; 2] {
    [224, 224]
}

fn default_classes() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_width")]
    pub width_multiplier: f64,
    /// `[H, W]`; images always carry 3 channels.
    #[serde(default = "default_input")]
    pub input_size: [usize; 2],
    #[serde(default = "default_classes")]
    pub num_classes: usize,
}

fn default_variant() -> Variant {
    Variant::DeepMediX
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: default_variant(),
            width_multiplier: default_width(),
            input_size: default_input(),
            num_classes: default_classes(),
        }
    }
}

impl ModelConfig {
    pub fn backbone(&self) -> BackboneSpec {
        let [h, w] = self.input_size;
        BackboneSpec::with_width(self.width_multiplier, [h, w, 3])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::Config(format!("width_multiplier must be positive, got {}", self.width_multiplier)));
        }
        if self.input_size.contains(&0) {
            return Err(Error::Config("input_size must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        Ok(())
    }
}

fn default_fractions() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

/// Exactly one of `synthetic` or `manifest`. Synthetic data is split with
/// `fractions`; a manifest carries its own split column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Train, validation and test shares.
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
}

impl DataConfig {
    pub fn synthetic(spec: SyntheticSpec) -> Self {
        DataConfig { synthetic: Some(spec), manifest: None, fractions: default_fractions() }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.synthetic, &self.manifest) {
            (Some(s), None) => s.validate(),
            (None, Some(_)) => Ok(()),
            (Some(_), Some(_)) => Err(Error::Config("data: give either synthetic or manifest, not both".into())),
            (None, None) => Err(Error::Config("data: synthetic or manifest is required".into())),
        }
    }
}

fn default_points() -> usize {
    4
}

fn default_eigenpairs() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Test samples (or random inputs without data) probed.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Leading eigenvalues reported per point.
    #[serde(default = "default_eigenpairs")]
    pub eigenpairs: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig { points: default_points(), eigenpairs: default_eigenpairs() }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/latest")
}

/// Full description of one run. Every section has defaults, so `{}` is a
/// valid `flops` config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    /// Schedule and optimizer. Its `seed` and `precision` are replaced by
    /// the top-level values.
    #[serde(default)]
    pub train: TrainConfig,
    /// Its `seed` is replaced by the top-level value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub federated: Option<FederatedConfig>,
    #[serde(default)]
    pub analyze: AnalyzeConfig,
    /// Checkpoint directory scored by `eval`, and optionally used as the
    /// starting weights of `analyze`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            data: None,
            train: TrainConfig::default(),
            federated: None,
            analyze: AnalyzeConfig::default(),
            checkpoint: None,
            output: default_output(),
            seed: 0,
            precision: Precision::default(),
        }
    }
}

/// Command-line values that win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub precision: Option<Precision>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies flag and environment overrides (flag > environment > file)
    /// and pushes the top-level seed and precision into the sections.
    pub fn resolve(mut self, overrides: &Overrides, env_output: Option<PathBuf>) -> Result<Self> {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(p) = overrides.precision {
            self.precision = p;
        }
        if let Some(out) = overrides.output.clone().or(env_output) {
            self.output = out;
        }
        self.train.seed = self.seed;
        self.train.precision = self.precision;
        if let Some(f) = &mut self.federated {
            f.seed = self.seed;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(d) = &self.data {
            d.validate()?;
        }
        if let Some(f) = &self.federated {
            f.validate()?;
        }
        Ok(())
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data.as_ref().ok_or_else(|| Error::Config("this command needs a data section".into()))
    }

    pub fn federated(&self) -> Result<&FederatedConfig> {
        self.federated.as_ref().ok_or_else(|| Error::Config("this command needs a federated section".into()))
    }

    pub fn checkpoint(&self) -> Result<&Path> {
        self.checkpoint.as_deref().ok_or_else(|| Error::Config("this command needs a checkpoint path".into()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
