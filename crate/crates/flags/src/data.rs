//! Synthetic dataset with factorized structure: each sample is a class
//! (foreground) factor plus a context (background) factor plus Gaussian
//! noise. Context factors are shared across classes, so same-class samples
//! split into "same background" and "different background" groups — the
//! structure the pair miner keys on.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FlagsError, Result};

pub const DATA_SCHEMA_VERSION: &str = "flags-data-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub num_classes: usize,
    pub contexts_per_class: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub noise_sigma: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            num_classes: 10,
            contexts_per_class: 4,
            samples_per_class: 30,
            input_dim: 128,
            noise_sigma: 0.1,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.contexts_per_class == 0 || self.samples_per_class == 0 {
            return Err(FlagsError::Config("dataset counts must be positive".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(FlagsError::Config("noise_sigma must be non-negative".into()));
        }
        if self.input_dim < self.num_classes + self.contexts_per_class {
            return Err(FlagsError::Config(format!(
                "input_dim {} too small for {} class + {} context factors",
                self.input_dim, self.num_classes, self.contexts_per_class
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub class: usize,
    pub context: usize,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub version: String,
    pub config: DataConfig,
    pub seed: u64,
    /// Unit-norm, mutually orthogonal foreground factors, one per class.
    pub class_factors: Vec<Vec<f64>>,
    /// Unit-norm, mutually orthogonal background factors, shared across classes.
    pub context_factors: Vec<Vec<f64>>,
    pub samples: Vec<Sample>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn sample(&self, id: usize) -> Result<&Sample> {
        self.samples
            .get(id)
            .filter(|s| s.id == id)
            .ok_or_else(|| FlagsError::Integrity(format!("sample id {id} not found")))
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draw `count` random vectors and Gram-Schmidt them into an orthonormal set.
fn orthonormal_set(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut set: Vec<Vec<f64>> = Vec::with_capacity(count);
    while set.len() < count {
        let mut v = gaussian_vector(rng, dim);
        for u in &set {
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= proj * ui;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue; // essentially impossible draw; retry
        }
        v.iter_mut().for_each(|x| *x /= norm);
        set.push(v);
    }
    set
}

/// Seed-deterministic generation: x = class_factor + context_factor + noise.
/// Contexts are assigned round-robin within each class, so class balance and
/// context balance are exact per config.
pub fn gen_synthetic(config: &DataConfig, seed: u64) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = orthonormal_set(
        &mut rng,
        config.num_classes + config.contexts_per_class,
        config.input_dim,
    );
    let class_factors = all[..config.num_classes].to_vec();
    let context_factors = all[config.num_classes..].to_vec();

    let mut samples = Vec::with_capacity(config.num_classes * config.samples_per_class);
    let mut id = 0;
    for class in 0..config.num_classes {
        for i in 0..config.samples_per_class {
            let context = i % config.contexts_per_class;
            let x: Vec<f64> = class_factors[class]
                .iter()
                .zip(&context_factors[context])
                .map(|(fg, bg)| {
                    let eps: f64 = rng.sample(StandardNormal);
                    fg + bg + config.noise_sigma * eps
                })
                .collect();
            samples.push(Sample { id, class, context, x });
            id += 1;
        }
    }
    Ok(SyntheticDataset {
        version: DATA_SCHEMA_VERSION.to_string(),
        config: config.clone(),
        seed,
        class_factors,
        context_factors,
        samples,
    })
}

pub fn write_dataset(ds: &SyntheticDataset, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, serde_json::to_vec(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: &std::path::Path) -> Result<SyntheticDataset> {
    let ds: SyntheticDataset = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if ds.version != DATA_SCHEMA_VERSION {
        return Err(FlagsError::Integrity(format!(
            "unexpected dataset version {}",
            ds.version
        )));
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub noise_sigma_aug: f64,
    pub mask_fraction: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            noise_sigma_aug: 0.05,
            mask_fraction: 0.25,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(FlagsError::Config(format!(
                "mask_fraction {} outside [0, 1)",
                self.mask_fraction
            )));
        }
        if self.noise_sigma_aug < 0.0 {
            return Err(FlagsError::Config("noise_sigma_aug must be non-negative".into()));
        }
        Ok(())
    }
}

/// Additive Gaussian noise, then zero out a round(mask_fraction * dim)
/// subset of coordinates (the occlusion analog of cropping).
pub fn augment(x: &[f64], cfg: &AugmentationConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out: Vec<f64> = x
        .iter()
        .map(|&v| {
            let eps: f64 = rng.sample(StandardNormal);
            v + cfg.noise_sigma_aug * eps
        })
        .collect();
    let n_mask = (cfg.mask_fraction * x.len() as f64).round() as usize;
    if n_mask > 0 {
        let picks = rand::seq::index::sample(rng, x.len(), n_mask);
        for i in picks {
            out[i] = 0.0;
        }
    }
    out
}
