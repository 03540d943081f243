use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use flags::cli::{
    cmd_eval, cmd_gen_data, cmd_gen_pairs, cmd_repro, cmd_train, render_table, resolve_seed,
    RunConfig,
};
use flags::train::TrainingMode;
use flags::FlagsError;

const CONFIG_HELP: &str = "\
CONFIG FILE (JSON, every field optional; unknown keys are rejected):
  seed                          base RNG seed (default 0)
  data.num_classes              classes in the synthetic dataset (10)
  data.contexts_per_class       shared context factors cycled per class (4)
  data.samples_per_class        samples generated per class (30)
  data.input_dim                raw input dimensionality (128)
  data.noise_sigma              per-coordinate Gaussian noise (0.1)
  pairs.bootstrap_epochs        aug-only pre-training before mining (5)
  model.input_dim               encoder input width, must match data (128)
  model.hidden_dim              encoder hidden width (64)
  model.num_hidden_layers       encoder hidden layers (2)
  model.feature_dim             encoder output / probe feature width (32)
  model.head_hidden_dim         projection head hidden width (32)
  model.embed_dim               projection output width (16)
  model.momentum_m              key-encoder momentum coefficient (0.999)
  train.lr                      SGD learning rate (0.03)
  train.sgd_momentum            SGD momentum (0.9)
  train.weight_decay            L2 weight decay (0)
  train.batch_size              samples per optimizer step (32)
  train.epochs                  passes over the dataset (200)
  train.temperature             contrastive temperature tau (0.2)
  train.queue_k                 negative queue capacity per branch (4096)
  train.lambda_local            weight on the local branch loss (1.0)
  train.mode                    aug_only | aug_global | aug_global_local
  train.mean_reduction          average the loss over the batch (false)
  train.augment.noise_sigma_aug augmentation noise sigma (0.05)
  train.augment.mask_fraction   fraction of coordinates zeroed (0.25)
  train.checkpoint_interval_epochs  periodic checkpoint cadence (50)
  eval.probe.lr                 probe learning rate (0.1)
  eval.probe.epochs             probe epochs (100)
  eval.probe.train_fraction     probe train split (0.8)

SEED PRECEDENCE: --seed flag, then FLAGS_SEED env var, then config seed.

EXIT CODES: 0 ok, 2 config error, 3 data/manifest integrity,
4 numeric failure, 5 repro threshold failure.";

#[derive(Parser)]
#[command(
    name = "flags",
    about = "Dual-subspace contrastive learning pipeline",
    after_long_help = CONFIG_HELP,
    after_help = "Run with --help for the full config-field reference."
)]
struct Cli {
    /// Path to a JSON run config; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base RNG seed, overriding FLAGS_SEED and the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic factorized dataset
    GenData {
        /// Output dataset path (JSON)
        #[arg(long, default_value = "out/dataset.json")]
        out: PathBuf,
    },
    /// Mine positive-pair assignments from encoder features
    GenPairs {
        /// Dataset produced by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint whose query encoder supplies mining features;
        /// omitted means a short aug-only bootstrap run is trained first
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output manifest path (JSONL)
        #[arg(long, default_value = "out/manifest.jsonl")]
        out: PathBuf,
        /// Also write the mined feature table here (JSON)
        #[arg(long)]
        features_out: Option<PathBuf>,
    },
    /// Train a model, writing checkpoint.json and metrics.csv
    Train {
        /// Dataset produced by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Pair manifest; required for aug_global and aug_global_local
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Training mode, overriding the config
        #[arg(long, value_parser = TrainingMode::from_str)]
        mode: Option<TrainingMode>,
        /// Output directory
        #[arg(long, default_value = "out/train")]
        out_dir: PathBuf,
    },
    /// Linear-probe and embedding-geometry evaluation of a checkpoint
    Eval {
        /// Checkpoint to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset produced by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Output report path (JSON)
        #[arg(long, default_value = "out/eval.json")]
        out: PathBuf,
    },
    /// Full pipeline across all three modes with threshold checks
    Repro {
        /// Output directory for datasets, runs, and the comparison table
        #[arg(long, default_value = "out/repro")]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<u8, FlagsError> {
    let cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    let seed = resolve_seed(cli.seed, &cfg)?;
    match cli.command {
        Command::GenData { out } => {
            cmd_gen_data(&cfg, seed, &out)?;
            println!("wrote {}", out.display());
        }
        Command::GenPairs { data, checkpoint, out, features_out } => {
            cmd_gen_pairs(&cfg, seed, &data, checkpoint.as_deref(), &out, features_out.as_deref())?;
            println!("wrote {}", out.display());
        }
        Command::Train { data, manifest, mode, out_dir } => {
            let ckpt = cmd_train(&cfg, seed, &data, manifest.as_deref(), mode, &out_dir)?;
            println!("wrote {}", ckpt.display());
        }
        Command::Eval { checkpoint, data, out } => {
            let report = cmd_eval(&cfg, seed, &checkpoint, &data, &out)?;
            println!("top1_accuracy: {:.4}", report.probe.top1_accuracy);
            println!("wrote {}", out.display());
        }
        Command::Repro { out_dir } => {
            let table = cmd_repro(&cfg, seed, &out_dir)?;
            print!("{}", render_table(&table));
            if !table.passed {
                eprintln!("repro threshold checks failed");
                return Ok(5);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
