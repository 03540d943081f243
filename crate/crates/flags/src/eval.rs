//! Linear-evaluation protocol and embedding diagnostics.
//!
//! The probe trains a single linear layer on frozen pre-projection encoder
//! features. The embedding report measures alignment, uniformity, and
//! class/context cosine structure in each projection subspace.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentationConfig, SyntheticDataset};
use crate::error::{FlagsError, Result};
use crate::model::{encode, project, ModelState};
use crate::numeric::cosine_similarity;

pub const REPORT_SCHEMA_VERSION: &str = "flags-report-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 0.1,
            epochs: 100,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(FlagsError::Config("probe lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.train_fraction) || self.train_fraction == 0.0 {
            return Err(FlagsError::Config(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub top1_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<usize>>,
    pub probe_weights: Vec<Vec<f64>>,
    pub probe_bias: Vec<f64>,
    pub split: SplitDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDescriptor {
    pub train_fraction: f64,
    pub seed: u64,
    pub train_size: usize,
    pub eval_size: usize,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Train a linear softmax classifier on frozen encoder features over a
/// seeded 80/20 split. The encoder itself is never touched.
pub fn linear_probe(
    model: &ModelState,
    dataset: &SyntheticDataset,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    cfg.validate()?;
    let num_classes = dataset.config.num_classes;
    let feature_dim = model.query_encoder.feature_dim();

    let features: Vec<Vec<f64>> = dataset
        .samples
        .iter()
        .map(|s| encode(&model.query_encoder, &s.x))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = dataset.samples.iter().map(|s| s.class).collect();

    let mut ids: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    ids.shuffle(&mut rng);
    let train_size = ((dataset.len() as f64) * cfg.train_fraction).round() as usize;
    let (train_ids, eval_ids) = ids.split_at(train_size);

    let mut train_classes = vec![false; num_classes];
    for &i in train_ids {
        train_classes[labels[i]] = true;
    }
    for &i in eval_ids {
        if !train_classes[labels[i]] {
            return Err(FlagsError::Split(format!(
                "class {} appears in the eval split but not in the train split",
                labels[i]
            )));
        }
    }

    // W[c][f], b[c], plain softmax cross-entropy SGD
    let mut w = vec![vec![0.0; feature_dim]; num_classes];
    let mut b = vec![0.0; num_classes];
    let mut order = train_ids.to_vec();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let f = &features[i];
            let logits: Vec<f64> = (0..num_classes)
                .map(|c| b[c] + w[c].iter().zip(f).map(|(wi, fi)| wi * fi).sum::<f64>())
                .collect();
            let mut p = softmax(&logits);
            p[labels[i]] -= 1.0;
            for c in 0..num_classes {
                let g = p[c];
                if g != 0.0 {
                    for (wi, fi) in w[c].iter_mut().zip(f) {
                        *wi -= cfg.lr * g * fi;
                    }
                    b[c] -= cfg.lr * g;
                }
            }
        }
    }

    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for &i in eval_ids {
        let f = &features[i];
        let logits: Vec<f64> = (0..num_classes)
            .map(|c| b[c] + w[c].iter().zip(f).map(|(wi, fi)| wi * fi).sum::<f64>())
            .collect();
        confusion[labels[i]][argmax(&logits)] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    // per-class accuracy = diagonal / row sum
    let per_class_accuracy: Vec<f64> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[c] as f64 / total as f64
            }
        })
        .collect();

    Ok(ProbeResult {
        top1_accuracy: correct as f64 / eval_ids.len() as f64,
        per_class_accuracy,
        confusion,
        probe_weights: w,
        probe_bias: b,
        split: SplitDescriptor {
            train_fraction: cfg.train_fraction,
            seed: cfg.seed,
            train_size,
            eval_size: eval_ids.len(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceStats {
    /// Mean squared distance between embeddings of augmented pairs.
    pub alignment: f64,
    /// log of the mean Gaussian-kernel similarity over random pairs.
    pub uniformity: f64,
    pub within_class_cosine: f64,
    pub between_class_cosine: f64,
    pub same_context_cosine: f64,
    pub different_context_cosine: f64,
    /// same_context_cosine - different_context_cosine
    pub context_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub version: String,
    pub seed: u64,
    pub global: SubspaceStats,
    pub local: SubspaceStats,
}

fn subspace_stats(
    embeddings: &[Vec<f64>],
    augmented: &[Vec<f64>],
    dataset: &SyntheticDataset,
    rng: &mut ChaCha8Rng,
) -> Result<SubspaceStats> {
    let n = embeddings.len();
    let mut alignment = 0.0;
    for (e, a) in embeddings.iter().zip(augmented) {
        alignment += e.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    alignment /= n as f64;

    let pair_count = 2000.min(n * (n - 1) / 2);
    let mut kernel_sum = 0.0;
    let mut within = (0.0, 0usize);
    let mut between = (0.0, 0usize);
    let mut same_ctx = (0.0, 0usize);
    let mut diff_ctx = (0.0, 0usize);
    for _ in 0..pair_count {
        let i = rand::Rng::random_range(rng, 0..n);
        let mut j = rand::Rng::random_range(rng, 0..n - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (&embeddings[i], &embeddings[j]);
        let sqdist: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        kernel_sum += (-2.0 * sqdist).exp();
        let cs = cosine_similarity(a, b)?;
        let (sa, sb) = (&dataset.samples[i], &dataset.samples[j]);
        if sa.class == sb.class {
            within.0 += cs;
            within.1 += 1;
        } else {
            between.0 += cs;
            between.1 += 1;
        }
        if sa.context == sb.context {
            same_ctx.0 += cs;
            same_ctx.1 += 1;
        } else {
            diff_ctx.0 += cs;
            diff_ctx.1 += 1;
        }
    }
    let mean = |acc: (f64, usize)| if acc.1 == 0 { 0.0 } else { acc.0 / acc.1 as f64 };
    let same = mean(same_ctx);
    let diff = mean(diff_ctx);
    Ok(SubspaceStats {
        alignment,
        uniformity: (kernel_sum / pair_count as f64).ln(),
        within_class_cosine: mean(within),
        between_class_cosine: mean(between),
        same_context_cosine: same,
        different_context_cosine: diff,
        context_gap: same - diff,
    })
}

/// Deterministic diagnostics over both projection subspaces.
pub fn embedding_report(
    model: &ModelState,
    dataset: &SyntheticDataset,
    aug_cfg: &AugmentationConfig,
    seed: u64,
) -> Result<EmbeddingReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);

    let mut z_g = Vec::with_capacity(dataset.len());
    let mut z_l = Vec::with_capacity(dataset.len());
    let mut z_g_aug = Vec::with_capacity(dataset.len());
    let mut z_l_aug = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let f = encode(&model.query_encoder, &s.x)?;
        z_g.push(project(&model.heads.g_q, &f)?);
        z_l.push(project(&model.heads.l_q, &f)?);
        let ax = augment(&s.x, aug_cfg, &mut rng);
        let fa = encode(&model.query_encoder, &ax)?;
        z_g_aug.push(project(&model.heads.g_q, &fa)?);
        z_l_aug.push(project(&model.heads.l_q, &fa)?);
    }

    let global = subspace_stats(&z_g, &z_g_aug, dataset, &mut rng)?;
    let local = subspace_stats(&z_l, &z_l_aug, dataset, &mut rng)?;
    Ok(EmbeddingReport {
        version: REPORT_SCHEMA_VERSION.to_string(),
        seed,
        global,
        local,
    })
}
