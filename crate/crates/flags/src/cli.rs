//! Unified run configuration and the command implementations behind the
//! `flags` binary: gen-data, gen-pairs, train, eval, repro.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, read_dataset, write_dataset, DataConfig, SyntheticDataset};
use crate::error::{FlagsError, Result};
use crate::eval::{embedding_report, linear_probe, EmbeddingReport, ProbeConfig, ProbeResult};
use crate::model::ModelConfig;
use crate::pairs::{
    build_manifest, compute_features, read_manifest, write_features, write_manifest,
};
use crate::train::{load_checkpoint, train, TrainConfig, TrainingMode};

/// How gen-pairs obtains mining features when no prior checkpoint is given:
/// train an aug-only model for `bootstrap_epochs` first (0 means mine from
/// a freshly initialized encoder).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsConfig {
    pub bootstrap_epochs: usize,
}

impl Default for PairsConfig {
    fn default() -> Self {
        PairsConfig { bootstrap_epochs: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub probe: ProbeConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { probe: ProbeConfig::default() }
    }
}

/// The whole pipeline's configuration. Every field has a default; the
/// zero-config run works. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub pairs: PairsConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| FlagsError::Config(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.probe.validate()?;
        if self.model.input_dim != self.data.input_dim {
            return Err(FlagsError::Config(format!(
                "model.input_dim {} does not match data.input_dim {}",
                self.model.input_dim, self.data.input_dim
            )));
        }
        Ok(())
    }
}

/// Seed precedence: explicit --seed flag, then FLAGS_SEED, then the config.
pub fn resolve_seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Ok(env) = std::env::var("FLAGS_SEED") {
        return env
            .parse()
            .map_err(|_| FlagsError::Config(format!("FLAGS_SEED '{env}' is not a u64")));
    }
    Ok(cfg.seed)
}

/// Echo the effective merged config next to an output for provenance.
fn echo_config(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<()> {
    let mut effective = cfg.clone();
    effective.seed = seed;
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("effective-config.json"),
        serde_json::to_vec_pretty(&effective)?,
    )?;
    Ok(())
}

pub fn cmd_gen_data(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let ds = gen_synthetic(&cfg.data, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
        echo_config(cfg, seed, parent)?;
    }
    write_dataset(&ds, out)
}

/// Mine the pair manifest. `checkpoint` supplies the feature encoder; when
/// absent, a bootstrap aug-only model is trained first.
pub fn cmd_gen_pairs(
    cfg: &RunConfig,
    seed: u64,
    data_path: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
    features_out: Option<&Path>,
) -> Result<()> {
    let ds = read_dataset(data_path)?;
    let (encoder, provenance) = match checkpoint {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            (ckpt.query_encoder, p.display().to_string())
        }
        None => {
            let encoder = bootstrap_encoder(cfg, &ds, seed)?;
            (encoder, format!("bootstrap({} epochs)", cfg.pairs.bootstrap_epochs))
        }
    };
    let table = compute_features(&encoder, &ds, &provenance)?;
    let manifest = build_manifest(&table)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
        echo_config(cfg, seed, parent)?;
    }
    write_manifest(&manifest, out)?;
    if let Some(fp) = features_out {
        write_features(&table, fp)?;
    }
    Ok(())
}

fn bootstrap_encoder(
    cfg: &RunConfig,
    ds: &SyntheticDataset,
    seed: u64,
) -> Result<crate::model::EncoderParams> {
    if cfg.pairs.bootstrap_epochs == 0 {
        return Ok(crate::model::init_model(&cfg.model, seed)?.query_encoder);
    }
    let mut boot_cfg = cfg.train.clone();
    boot_cfg.mode = TrainingMode::AugOnly;
    boot_cfg.epochs = cfg.pairs.bootstrap_epochs;
    boot_cfg.checkpoint_interval_epochs = 0;
    let dir = tempfile_dir()?;
    let ckpt_path = train(&boot_cfg, &cfg.model, ds, None, &dir, seed)?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    std::fs::remove_dir_all(&dir).ok();
    Ok(ckpt.query_encoder)
}

fn tempfile_dir() -> Result<PathBuf> {
    let dir = std::env::temp_dir().join(format!("flags-bootstrap-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn cmd_train(
    cfg: &RunConfig,
    seed: u64,
    data_path: &Path,
    manifest_path: Option<&Path>,
    mode: Option<TrainingMode>,
    out_dir: &Path,
) -> Result<PathBuf> {
    let ds = read_dataset(data_path)?;
    let mut train_cfg = cfg.train.clone();
    if let Some(m) = mode {
        train_cfg.mode = m;
    }
    let manifest = match manifest_path {
        Some(p) => Some(read_manifest(p)?),
        None => None,
    };
    if train_cfg.mode.uses_mined_pairs() && manifest.is_none() {
        return Err(FlagsError::Config(format!(
            "mode {} requires --manifest",
            train_cfg.mode.as_str()
        )));
    }
    if let Some(m) = &manifest {
        crate::pairs::validate_manifest(m, &ds)?;
    }
    echo_config(cfg, seed, out_dir)?;
    train(&train_cfg, &cfg.model, &ds, manifest.as_ref(), out_dir, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub version: String,
    pub probe: ProbeResult,
    pub embedding: EmbeddingReport,
}

pub fn cmd_eval(
    cfg: &RunConfig,
    seed: u64,
    checkpoint_path: &Path,
    data_path: &Path,
    out: &Path,
) -> Result<EvalOutput> {
    let ds = read_dataset(data_path)?;
    let ckpt = load_checkpoint(checkpoint_path)?;
    let model = ckpt.model_state();
    let mut probe_cfg = cfg.eval.probe.clone();
    probe_cfg.seed = seed;
    let probe = linear_probe(&model, &ds, &probe_cfg)?;
    let embedding = embedding_report(&model, &ds, &cfg.train.augment, seed)?;
    let output = EvalOutput {
        version: crate::eval::REPORT_SCHEMA_VERSION.to_string(),
        probe,
        embedding,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
        echo_config(cfg, seed, parent)?;
    }
    std::fs::write(out, serde_json::to_vec_pretty(&output)?)?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproRow {
    pub mode: String,
    pub probe_accuracy: f64,
    /// Global-head same-context minus different-context cosine gap.
    pub context_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproTable {
    pub seed: u64,
    pub rows: Vec<ReproRow>,
    pub checks: Vec<ReproCheck>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Full pipeline for all three training modes, plus the threshold checks
/// the comparison is expected to satisfy.
pub fn cmd_repro(cfg: &RunConfig, seed: u64, out_dir: &Path) -> Result<ReproTable> {
    std::fs::create_dir_all(out_dir)?;
    echo_config(cfg, seed, out_dir)?;

    let stage = |name: &str, e: FlagsError| {
        FlagsError::Config(format!("repro stage '{name}' failed: {e}"))
    };

    let data_path = out_dir.join("dataset.json");
    cmd_gen_data(cfg, seed, &data_path).map_err(|e| stage("gen-data", e))?;

    let manifest_path = out_dir.join("manifest.jsonl");
    cmd_gen_pairs(cfg, seed, &data_path, None, &manifest_path, None)
        .map_err(|e| stage("gen-pairs", e))?;

    let ds = read_dataset(&data_path)?;
    let manifest = read_manifest(&manifest_path)?;

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for mode in [
        TrainingMode::AugOnly,
        TrainingMode::AugGlobal,
        TrainingMode::AugGlobalLocal,
    ] {
        let mode_dir = out_dir.join(mode.as_str());
        let mut train_cfg = cfg.train.clone();
        train_cfg.mode = mode;
        let manifest_ref = if mode.uses_mined_pairs() { Some(&manifest) } else { None };
        let ckpt_path = train(&train_cfg, &cfg.model, &ds, manifest_ref, &mode_dir, seed)
            .map_err(|e| stage(&format!("train[{}]", mode.as_str()), e))?;
        let ckpt = load_checkpoint(&ckpt_path)?;
        let model = ckpt.model_state();
        let mut probe_cfg = cfg.eval.probe.clone();
        probe_cfg.seed = seed;
        let probe = linear_probe(&model, &ds, &probe_cfg)
            .map_err(|e| stage(&format!("eval[{}]", mode.as_str()), e))?;
        let report = embedding_report(&model, &ds, &cfg.train.augment, seed)
            .map_err(|e| stage(&format!("report[{}]", mode.as_str()), e))?;
        rows.push(ReproRow {
            mode: mode.as_str().to_string(),
            probe_accuracy: probe.top1_accuracy,
            context_correlation: report.global.context_gap,
        });
        reports.push(report);
    }

    let acc = |i: usize| rows[i].probe_accuracy;
    let agl_report = &reports[2];
    let checks = vec![
        ReproCheck {
            name: "aug_global > aug_only".into(),
            passed: acc(1) > acc(0),
            detail: format!("{:.4} vs {:.4}", acc(1), acc(0)),
        },
        ReproCheck {
            name: "aug_only >= 0.5".into(),
            passed: acc(0) >= 0.5,
            detail: format!("{:.4}", acc(0)),
        },
        ReproCheck {
            name: "aug_global >= 0.5".into(),
            passed: acc(1) >= 0.5,
            detail: format!("{:.4}", acc(1)),
        },
        ReproCheck {
            name: "aug_global_local >= 0.9 * aug_global".into(),
            passed: acc(2) >= 0.9 * acc(1),
            detail: format!("{:.4} vs 0.9*{:.4}", acc(2), acc(1)),
        },
        ReproCheck {
            name: "global context gap > local context gap (aug_global_local)".into(),
            passed: agl_report.global.context_gap > agl_report.local.context_gap,
            detail: format!(
                "{:.4} vs {:.4}",
                agl_report.global.context_gap, agl_report.local.context_gap
            ),
        },
    ];
    let passed = checks.iter().all(|c| c.passed);
    let table = ReproTable { seed, rows, checks, passed };
    std::fs::write(out_dir.join("table.json"), serde_json::to_vec_pretty(&table)?)?;
    Ok(table)
}

pub fn render_table(table: &ReproTable) -> String {
    let mut out = String::new();
    out.push_str(&format!("seed: {}\n", table.seed));
    out.push_str(&format!(
        "{:<18} {:>14} {:>20}\n",
        "mode", "probe_accuracy", "context_correlation"
    ));
    for r in &table.rows {
        out.push_str(&format!(
            "{:<18} {:>14.4} {:>20.4}\n",
            r.mode, r.probe_accuracy, r.context_correlation
        ));
    }
    out.push('\n');
    for c in &table.checks {
        out.push_str(&format!(
            "[{}] {} ({})\n",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.detail
        ));
    }
    out
}
