//! Training loop: per-step forward of the query and its five keys, combined
//! loss over the batch, SGD-with-momentum on the query side, momentum mixing
//! of the key side, queue updates.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentationConfig, SyntheticDataset};
use crate::error::{FlagsError, Result};
use crate::loss::{branch_loss, BranchInputs};
use crate::model::{
    encode, encode_on_graph, init_model, momentum_update, project, project_on_graph,
    query_params, query_params_mut, stage_encoder, stage_head, ModelConfig, ModelState,
};
use crate::numeric::{Graph, Tensor};
use crate::pairs::PairManifest;
use crate::queue::{Branch, KeyQueue};

pub const CKPT_SCHEMA_VERSION: &str = "flags-ckpt-v1";

/// Which positive sets each step populates.
///
/// aug_only:         P_g = {aug},            no local branch
/// aug_global:       P_g = {g0, g1, aug},    no local branch
/// aug_global_local: P_g = {g0, g1, aug},    P_l = {l0, l1}
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    AugOnly,
    AugGlobal,
    AugGlobalLocal,
}

impl TrainingMode {
    pub fn uses_mined_pairs(self) -> bool {
        !matches!(self, TrainingMode::AugOnly)
    }

    pub fn has_local_branch(self) -> bool {
        matches!(self, TrainingMode::AugGlobalLocal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingMode::AugOnly => "aug_only",
            TrainingMode::AugGlobal => "aug_global",
            TrainingMode::AugGlobalLocal => "aug_global_local",
        }
    }
}

impl std::str::FromStr for TrainingMode {
    type Err = FlagsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aug_only" => Ok(TrainingMode::AugOnly),
            "aug_global" => Ok(TrainingMode::AugGlobal),
            "aug_global_local" => Ok(TrainingMode::AugGlobalLocal),
            other => Err(FlagsError::Config(format!(
                "unknown training mode '{other}' (expected aug_only, aug_global, aug_global_local)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f64,
    pub queue_k: usize,
    pub lambda_local: f64,
    pub mode: TrainingMode,
    /// Sum batch losses per Eq-1 by default; mean reduction decouples the
    /// learning rate from batch size when enabled.
    pub mean_reduction: bool,
    pub augment: AugmentationConfig,
    pub checkpoint_interval_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.03,
            sgd_momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 200,
            temperature: 0.2,
            queue_k: 4096,
            lambda_local: 1.0,
            mode: TrainingMode::AugGlobalLocal,
            mean_reduction: false,
            augment: AugmentationConfig::default(),
            checkpoint_interval_epochs: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 {
            return Err(FlagsError::Config("lr must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return Err(FlagsError::Config(format!(
                "sgd_momentum {} outside [0, 1)",
                self.sgd_momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(FlagsError::Config("batch_size must be at least 1".into()));
        }
        if self.temperature <= 0.0 {
            return Err(FlagsError::Config("temperature must be positive".into()));
        }
        if self.queue_k == 0 {
            return Err(FlagsError::Config("queue_k must be positive".into()));
        }
        if self.lambda_local < 0.0 {
            return Err(FlagsError::Config("lambda_local must be non-negative".into()));
        }
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss_total: f64,
    pub loss_global: f64,
    pub loss_local: f64,
    pub q_g_len: usize,
    pub q_l_len: usize,
}

pub struct TrainState {
    pub model: ModelState,
    pub velocities: Vec<Tensor>,
    pub q_g: KeyQueue,
    pub q_l: KeyQueue,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub metrics: Vec<StepMetrics>,
    seed: u64,
}

impl TrainState {
    pub fn new(model: ModelState, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let embed_dim = model.heads.g_q.embed_dim();
        let velocities = query_params(&model)
            .iter()
            .map(|t| Tensor::zeros(t.shape.clone()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1); // stream 0 belongs to model init
        Ok(TrainState {
            model,
            velocities,
            q_g: KeyQueue::new(cfg.queue_k, embed_dim, Branch::Global)?,
            q_l: KeyQueue::new(cfg.queue_k, embed_dim, Branch::Local)?,
            step: 0,
            rng,
            metrics: Vec::new(),
            seed,
        })
    }
}

/// The full checkpoint: model, queues, rng provenance, step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub config: ModelConfig,
    pub query_encoder: crate::model::EncoderParams,
    pub key_encoder: crate::model::EncoderParams,
    pub heads: crate::model::Heads,
    pub momentum_m: f64,
    pub rng_state: u64,
    pub step: u64,
    pub queues: CheckpointQueues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointQueues {
    pub global: KeyQueue,
    pub local: KeyQueue,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        Checkpoint {
            version: CKPT_SCHEMA_VERSION.to_string(),
            config: state.model.config.clone(),
            query_encoder: state.model.query_encoder.clone(),
            key_encoder: state.model.key_encoder.clone(),
            heads: state.model.heads.clone(),
            momentum_m: state.model.momentum_m,
            rng_state: state.seed,
            step: state.step,
            queues: CheckpointQueues {
                global: state.q_g.clone(),
                local: state.q_l.clone(),
            },
        }
    }

    pub fn model_state(&self) -> ModelState {
        ModelState {
            config: self.config.clone(),
            query_encoder: self.query_encoder.clone(),
            key_encoder: self.key_encoder.clone(),
            heads: self.heads.clone(),
            momentum_m: self.momentum_m,
        }
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec(ckpt)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if ckpt.version != CKPT_SCHEMA_VERSION {
        return Err(FlagsError::Integrity(format!(
            "unexpected checkpoint version {}",
            ckpt.version
        )));
    }
    Ok(ckpt)
}

pub struct Trainer<'a> {
    pub cfg: &'a TrainConfig,
    pub dataset: &'a SyntheticDataset,
    pub manifest: Option<&'a PairManifest>,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: &'a TrainConfig,
        model_cfg: &ModelConfig,
        dataset: &'a SyntheticDataset,
        manifest: Option<&'a PairManifest>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode.uses_mined_pairs() && manifest.is_none() {
            return Err(FlagsError::Config(format!(
                "mode {} requires a pair manifest",
                cfg.mode.as_str()
            )));
        }
        if model_cfg.input_dim != dataset.input_dim() {
            return Err(FlagsError::Config(format!(
                "model input_dim {} does not match dataset input_dim {}",
                model_cfg.input_dim,
                dataset.input_dim()
            )));
        }
        let model = init_model(model_cfg, seed)?;
        let state = TrainState::new(model, cfg, seed)?;
        Ok(Trainer { cfg, dataset, manifest, state })
    }

    /// One optimizer step over a batch of query sample ids.
    pub fn train_step(&mut self, batch: &[usize]) -> Result<StepMetrics> {
        let cfg = self.cfg;
        let model = &self.state.model;

        // queue snapshots are fixed for the whole step; keys enqueue at the end
        let neg_g = self.state.q_g.negatives_matrix();
        let neg_l = self.state.q_l.negatives_matrix();

        let mut grad_acc: Vec<Vec<f64>> = query_params(model)
            .iter()
            .map(|t| vec![0.0; t.numel()])
            .collect();
        let mut sum_global = 0.0;
        let mut sum_local = 0.0;
        let mut new_global_keys: Vec<Vec<f64>> = Vec::new();
        let mut new_local_keys: Vec<Vec<f64>> = Vec::new();

        for &id in batch {
            let sample = self.dataset.sample(id)?;

            // key-side forwards, outside any gradient graph
            let aug_x = augment(&sample.x, &cfg.augment, &mut self.state.rng);
            let k_aug = project(&model.heads.g_k, &encode(&model.key_encoder, &aug_x)?)?;

            let mut global_keys: Vec<Vec<f64>> = Vec::new();
            let mut local_keys: Vec<Vec<f64>> = Vec::new();
            if cfg.mode.uses_mined_pairs() {
                let entry = self.manifest.expect("checked in new").get(id)?;
                if entry.class != sample.class {
                    return Err(FlagsError::Integrity(format!(
                        "manifest entry {} class {} disagrees with dataset class {}",
                        id, entry.class, sample.class
                    )));
                }
                for &gid in &entry.global {
                    let x = &self.dataset.sample(gid)?.x;
                    global_keys.push(project(&model.heads.g_k, &encode(&model.key_encoder, x)?)?);
                }
                if cfg.mode.has_local_branch() {
                    for &lid in &entry.local {
                        let x = &self.dataset.sample(lid)?.x;
                        local_keys.push(project(&model.heads.l_k, &encode(&model.key_encoder, x)?)?);
                    }
                }
            }
            global_keys.push(k_aug);

            // query-side forward with gradient recording
            let mut g = Graph::new();
            let enc = stage_encoder(&mut g, &model.query_encoder);
            let head_g = stage_head(&mut g, &model.heads.g_q);
            let head_l = stage_head(&mut g, &model.heads.l_q);
            let x = g.constant(Tensor::vector(sample.x.clone()));
            let feature = encode_on_graph(&mut g, &enc, x)?;
            let z_g = project_on_graph(&mut g, &head_g, feature)?;

            let global_inputs = BranchInputs {
                z_query: z_g,
                positives: global_keys
                    .iter()
                    .map(|k| g.constant(Tensor::vector(k.clone())))
                    .collect(),
                negatives: neg_g.clone(),
                temperature: cfg.temperature,
            };
            let loss_g = branch_loss(&mut g, &global_inputs)?;
            sum_global += g.value(loss_g).item();

            let total = if cfg.mode.has_local_branch() {
                let z_l = project_on_graph(&mut g, &head_l, feature)?;
                let local_inputs = BranchInputs {
                    z_query: z_l,
                    positives: local_keys
                        .iter()
                        .map(|k| g.constant(Tensor::vector(k.clone())))
                        .collect(),
                    negatives: neg_l.clone(),
                    temperature: cfg.temperature,
                };
                let loss_l = branch_loss(&mut g, &local_inputs)?;
                sum_local += g.value(loss_l).item();
                let weighted = g.scale(loss_l, cfg.lambda_local);
                g.add(loss_g, weighted)?
            } else {
                loss_g
            };

            g.backward(total)?;

            // fixed accumulation order: encoder layers, g_q head, l_q head
            let mut param_nodes = Vec::new();
            for &(w, b) in &enc.layers {
                param_nodes.push(w);
                param_nodes.push(b);
            }
            for &(w, b) in &head_g.layers {
                param_nodes.push(w);
                param_nodes.push(b);
            }
            for &(w, b) in &head_l.layers {
                param_nodes.push(w);
                param_nodes.push(b);
            }
            for (acc, node) in grad_acc.iter_mut().zip(param_nodes) {
                for (a, v) in acc.iter_mut().zip(&g.grad(node).values) {
                    *a += v;
                }
            }

            new_global_keys.extend(global_keys);
            new_local_keys.extend(local_keys);
        }

        let scale = if cfg.mean_reduction {
            1.0 / batch.len() as f64
        } else {
            1.0
        };

        // SGD with momentum on query-side parameters; key side never sees
        // the optimizer
        if cfg.lr > 0.0 {
            let mut params = query_params_mut(&mut self.state.model);
            for ((param, vel), acc) in params
                .iter_mut()
                .zip(self.state.velocities.iter_mut())
                .zip(&grad_acc)
            {
                for ((p, v), &a) in param
                    .values
                    .iter_mut()
                    .zip(vel.values.iter_mut())
                    .zip(acc)
                {
                    let grad = a * scale + cfg.weight_decay * *p;
                    *v = cfg.sgd_momentum * *v + grad;
                    *p -= cfg.lr * *v;
                }
            }
        }

        momentum_update(&mut self.state.model)?;

        self.state.q_g.enqueue_batch(&new_global_keys)?;
        if cfg.mode.has_local_branch() {
            self.state.q_l.enqueue_batch(&new_local_keys)?;
        }

        self.state.step += 1;
        let metrics = StepMetrics {
            step: self.state.step,
            loss_total: (sum_global + cfg.lambda_local * sum_local) * scale,
            loss_global: sum_global * scale,
            loss_local: sum_local * scale,
            q_g_len: self.state.q_g.len(),
            q_l_len: self.state.q_l.len(),
        };
        self.state.metrics.push(metrics.clone());
        Ok(metrics)
    }

    /// One pass over all queries in a seeded shuffle order.
    pub fn run_epoch(&mut self) -> Result<()> {
        let mut ids: Vec<usize> = self.dataset.samples.iter().map(|s| s.id).collect();
        ids.shuffle(&mut self.state.rng);
        let batches: Vec<Vec<usize>> = ids
            .chunks(self.cfg.batch_size)
            .map(|c| c.to_vec())
            .collect();
        for batch in batches {
            self.train_step(&batch)?;
        }
        Ok(())
    }
}

pub fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut out = String::from("step,loss_total,loss_global,loss_local,q_g_len,q_l_len\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.step, m.loss_total, m.loss_global, m.loss_local, m.q_g_len, m.q_l_len
        ));
    }
    out
}

/// Run the configured number of epochs, streaming metrics to
/// `<out_dir>/metrics.csv` and checkpoints to `<out_dir>/checkpoint.json`.
/// Returns the final checkpoint path.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    dataset: &SyntheticDataset,
    manifest: Option<&PairManifest>,
    out_dir: &Path,
    seed: u64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let mut trainer = Trainer::new(cfg, model_cfg, dataset, manifest, seed)?;
    let ckpt_path = out_dir.join("checkpoint.json");
    for epoch in 1..=cfg.epochs {
        trainer.run_epoch()?;
        if cfg.checkpoint_interval_epochs > 0
            && epoch % cfg.checkpoint_interval_epochs == 0
            && epoch != cfg.epochs
        {
            save_checkpoint(&Checkpoint::from_state(&trainer.state), &ckpt_path)?;
        }
    }
    save_checkpoint(&Checkpoint::from_state(&trainer.state), &ckpt_path)?;
    std::fs::write(out_dir.join("metrics.csv"), metrics_csv(&trainer.state.metrics))?;
    Ok(ckpt_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, DataConfig};
    use crate::pairs::{build_manifest, compute_features};

    fn tiny_setup() -> (DataConfig, ModelConfig, SyntheticDataset, PairManifest) {
        let data_cfg = DataConfig {
            num_classes: 2,
            contexts_per_class: 2,
            samples_per_class: 6,
            input_dim: 10,
            noise_sigma: 0.1,
        };
        let model_cfg = ModelConfig {
            input_dim: 10,
            hidden_dim: 8,
            num_hidden_layers: 1,
            feature_dim: 6,
            head_hidden_dim: 5,
            embed_dim: 4,
            momentum_m: 0.99,
        };
        let ds = gen_synthetic(&data_cfg, 3).unwrap();
        let state = init_model(&model_cfg, 3).unwrap();
        let table = compute_features(&state.query_encoder, &ds, "bootstrap").unwrap();
        let manifest = build_manifest(&table).unwrap();
        (data_cfg, model_cfg, ds, manifest)
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 2,
            queue_k: 32,
            checkpoint_interval_epochs: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_but_grows_queues() {
        let (_, model_cfg, ds, manifest) = tiny_setup();
        let mut cfg = tiny_train_cfg();
        cfg.lr = 0.0;
        cfg.mode = TrainingMode::AugGlobalLocal;
        let mut trainer = Trainer::new(&cfg, &model_cfg, &ds, Some(&manifest), 5).unwrap();
        let before = trainer.state.model.query_encoder.clone();
        let m = trainer.train_step(&[0, 1, 2, 3]).unwrap();
        assert_eq!(trainer.state.model.query_encoder, before);
        assert_eq!(m.q_g_len, 3 * 4);
        assert_eq!(m.q_l_len, 2 * 4);
        // velocities stay zero when no lr>0 step has occurred
        assert!(trainer
            .state
            .velocities
            .iter()
            .all(|v| v.values.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn one_step_moves_query_and_mixes_key() {
        let (_, model_cfg, ds, manifest) = tiny_setup();
        let cfg = tiny_train_cfg();
        let mut trainer = Trainer::new(&cfg, &model_cfg, &ds, Some(&manifest), 5).unwrap();
        // first step fills the queues (empty-queue loss is exactly zero)
        trainer.train_step(&[4, 5, 6, 7]).unwrap();
        let q_before = trainer.state.model.query_encoder.clone();
        let k_before = trainer.state.model.key_encoder.clone();
        trainer.train_step(&[0, 1, 2, 3]).unwrap();
        let q_after = &trainer.state.model.query_encoder;
        let k_after = &trainer.state.model.key_encoder;
        assert_ne!(q_after, &q_before);
        // key moved toward query by factor (1 - m)
        let m = model_cfg.momentum_m;
        for ((kb, qa), ka) in k_before.layers[0]
            .weight
            .values
            .iter()
            .zip(&q_after.layers[0].weight.values)
            .zip(&k_after.layers[0].weight.values)
        {
            let expected = m * kb + (1.0 - m) * qa;
            assert!((ka - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn aug_only_queue_growth() {
        let (_, model_cfg, ds, _) = tiny_setup();
        let mut cfg = tiny_train_cfg();
        cfg.mode = TrainingMode::AugOnly;
        let mut trainer = Trainer::new(&cfg, &model_cfg, &ds, None, 5).unwrap();
        let m = trainer.train_step(&[0, 1, 2]).unwrap();
        assert_eq!(m.q_g_len, 3); // one aug key per query
        assert_eq!(m.q_l_len, 0);
    }

    #[test]
    fn mode_positive_set_sizes() {
        assert!(!TrainingMode::AugOnly.uses_mined_pairs());
        assert!(TrainingMode::AugGlobal.uses_mined_pairs());
        assert!(!TrainingMode::AugGlobal.has_local_branch());
        assert!(TrainingMode::AugGlobalLocal.has_local_branch());
        assert!("bogus".parse::<TrainingMode>().is_err());
        assert_eq!("aug_global".parse::<TrainingMode>().unwrap(), TrainingMode::AugGlobal);
    }

    #[test]
    fn mined_modes_require_manifest() {
        let (_, model_cfg, ds, _) = tiny_setup();
        let cfg = tiny_train_cfg();
        assert!(matches!(
            Trainer::new(&cfg, &model_cfg, &ds, None, 5),
            Err(FlagsError::Config(_))
        ));
    }

    #[test]
    fn zero_epochs_checkpoint_equals_init() {
        let (_, model_cfg, ds, manifest) = tiny_setup();
        let mut cfg = tiny_train_cfg();
        cfg.epochs = 0;
        let dir = tempfile::tempdir().unwrap();
        let path = train(&cfg, &model_cfg, &ds, Some(&manifest), dir.path(), 5).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        let init = init_model(&model_cfg, 5).unwrap();
        assert_eq!(ckpt.query_encoder, init.query_encoder);
        assert_eq!(ckpt.key_encoder, init.key_encoder);
        assert_eq!(ckpt.step, 0);
        assert!(ckpt.queues.global.is_empty());
        assert!(ckpt.queues.local.is_empty());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (_, model_cfg, ds, manifest) = tiny_setup();
        let cfg = tiny_train_cfg();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let p1 = train(&cfg, &model_cfg, &ds, Some(&manifest), d1.path(), 7).unwrap();
        let p2 = train(&cfg, &model_cfg, &ds, Some(&manifest), d2.path(), 7).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
        assert_eq!(
            std::fs::read(d1.path().join("metrics.csv")).unwrap(),
            std::fs::read(d2.path().join("metrics.csv")).unwrap()
        );
    }

    #[test]
    fn queue_lengths_follow_step_count() {
        let (_, model_cfg, ds, manifest) = tiny_setup();
        let mut cfg = tiny_train_cfg();
        cfg.mode = TrainingMode::AugGlobal;
        cfg.queue_k = 20;
        let mut trainer = Trainer::new(&cfg, &model_cfg, &ds, Some(&manifest), 5).unwrap();
        for s in 1..=4u64 {
            let m = trainer.train_step(&[0, 1]).unwrap();
            let expected = (s as usize * 3 * 2).min(20);
            assert_eq!(m.q_g_len, expected);
            assert_eq!(m.q_l_len, 0);
        }
    }

    #[test]
    fn key_params_only_move_by_momentum_mixing() {
        // with m = 1 the key side must be bit-identical after many steps
        let (_, mut model_cfg, ds, manifest) = tiny_setup();
        model_cfg.momentum_m = 1.0;
        let cfg = tiny_train_cfg();
        let mut trainer = Trainer::new(&cfg, &model_cfg, &ds, Some(&manifest), 5).unwrap();
        let k_before = trainer.state.model.key_encoder.clone();
        let heads_before = (
            trainer.state.model.heads.g_k.clone(),
            trainer.state.model.heads.l_k.clone(),
        );
        for _ in 0..5 {
            trainer.train_step(&[0, 1, 2, 3]).unwrap();
        }
        assert_eq!(trainer.state.model.key_encoder, k_before);
        assert_eq!(trainer.state.model.heads.g_k, heads_before.0);
        assert_eq!(trainer.state.model.heads.l_k, heads_before.1);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (_, model_cfg, ds, manifest) = tiny_setup();
        let cfg = tiny_train_cfg();
        let dir = tempfile::tempdir().unwrap();
        let path = train(&cfg, &model_cfg, &ds, Some(&manifest), dir.path(), 11).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.version, CKPT_SCHEMA_VERSION);
        assert_eq!(ckpt.rng_state, 11);
        assert!(ckpt.step > 0);
        let model = ckpt.model_state();
        assert_eq!(model.config, model_cfg);
    }
}
