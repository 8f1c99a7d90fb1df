use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Blob images: class `c` draws `c + 1` Gaussian blobs at seeded positions
/// over a flat background, plus pixel noise. Values are clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_samples: usize,
    /// `[H, W]`.
    #[serde(default = "default_size")]
    pub size: [usize; 2],
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Blob standard deviation as a fraction of the image side.
    #[serde(default = "default_sigma")]
    pub blob_sigma: f64,
    /// Peak height of one blob.
    #[serde(default = "default_intensity")]
    pub blob_intensity: f64,
    #[serde(default = "default_background")]
    pub background: f64,
    /// Standard deviation of the additive pixel noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_size() -> [usize; 2] {
    [32, 32]
}

fn default_classes() -> usize {
    2
}

fn default_sigma() -> f64 {
    0.08
}

fn default_intensity() -> f64 {
    0.6
}

fn default_background() -> f64 {
    0.1
}

fn default_noise() -> f64 {
    0.05
}

impl SyntheticSpec {
    pub fn new(num_samples: usize, num_classes: usize, seed: u64) -> Self {
        SyntheticSpec {
            num_samples,
            size: default_size(),
            num_classes,
            blob_sigma: default_sigma(),
            blob_intensity: default_intensity(),
            background: default_background(),
            noise: default_noise(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 || self.num_classes == 0 || self.size.contains(&0) {
            return Err(Error::Config("synthetic data needs samples, classes and a non-empty size".into()));
        }
        let finite = [self.blob_sigma, self.blob_intensity, self.background, self.noise];
        if finite.iter().any(|v| !v.is_finite()) || self.blob_sigma <= 0.0 || self.noise < 0.0 {
            return Err(Error::Config("synthetic blob sigma must be positive and noise non-negative".into()));
        }
        Ok(())
    }
}

/// Sample `i` has label `i mod k`, so classes are exactly balanced when
/// `k` divides the sample count. Returns `[N, H, W, 3]` inputs and labels.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    spec.validate()?;
    let [h, w] = spec.size;
    let labels: Vec<usize> = (0..spec.num_samples).map(|i| i % spec.num_classes).collect();
    let sigma = spec.blob_sigma * h.min(w) as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut data = Vec::with_capacity(spec.num_samples * h * w * 3);
    for (i, &label) in labels.iter().enumerate() {
        let mut rng = Rng::derived(spec.seed, "synthetic", i as u64);
        let blobs: Vec<(f64, f64)> = (0..=label)
            .map(|_| (rng.uniform(0.15, 0.85) * h as f64, rng.uniform(0.15, 0.85) * w as f64))
            .collect();
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let signal: f64 = blobs
                    .iter()
                    .map(|&(cy, cx)| spec.blob_intensity * (-((py - cy).powi(2) + (px - cx).powi(2)) * inv).exp())
                    .sum();
                for _ in 0..3 {
                    let noise = if spec.noise > 0.0 { spec.noise * rng.normal() } else { 0.0 };
                    data.push(T::lit((spec.background + signal + noise).clamp(0.0, 1.0)));
                }
            }
        }
    }
    Ok((Tensor::new(vec![spec.num_samples, h, w, 3], data)?, labels))
}
