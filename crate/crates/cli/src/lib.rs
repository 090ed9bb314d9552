//! Command-line driver: training, evaluation, conversion, ablation and the
//! benchmark harness. Every command writes line-delimited JSON to stdout.

pub mod ablate;
pub mod bench;
pub mod commands;
pub mod report;

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use xlda_core::{CovarianceMode, CovarianceSpec, Schedule, Semantics, SigmaMode, DEFAULT_BETA};

use crate::ablate::AblationSchedule;

/// Exit status for successful runs.
pub const EXIT_OK: u8 = 0;
/// Bad command line.
pub const EXIT_USAGE: u8 = 1;
/// Unreadable, malformed or inconsistent data.
pub const EXIT_DATA: u8 = 2;
/// Numerical failure: a non-SPD covariance or a diverging loss.
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "xlda", version, about = "Streaming LDA for very large class counts")]
pub struct Cli {
    /// Worker threads for batched updates (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One streaming pass over an embedding file, writing a checkpoint.
    Train(TrainArgs),
    /// Accuracy of a checkpoint or linear head on an embedding file.
    Eval(EvalArgs),
    /// Linear head to LDA checkpoint, or checkpoint to linear head.
    Convert(ConvertArgs),
    /// Train means, covariance, both or neither from one initialization.
    Ablate(AblateArgs),
    /// Softmax-regression baseline trained by mini-batch gradient descent.
    FcBaseline(FcBaselineArgs),
    /// Training-time comparison over increasing class counts.
    BenchTrain(BenchTrainArgs),
    /// Exact against shortlisted per-query inference time.
    BenchInfer(BenchInferArgs),
    /// Write a synthetic Gaussian dataset with its Bayes accuracy.
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint instead of an empty model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    /// plastic or fixed
    #[arg(long, default_value_t = CovarianceMode::Plastic)]
    pub cov: CovarianceMode,
    /// chunk or exact
    #[arg(long, default_value_t = Semantics::Chunk)]
    pub semantics: Semantics,
    /// Shrinkage stored with the checkpoint.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// LDA checkpoint or linear head file.
    #[arg(long)]
    pub model: PathBuf,
    /// Override the checkpoint's shrinkage.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Score through the LSH shortlist instead of every class.
    #[arg(long)]
    pub active: bool,
    /// Active classes (default n/10); implies --active.
    #[arg(long)]
    pub k: Option<usize>,
    /// Seed for the LSH hyperplanes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["head", "model"])))]
pub struct ConvertArgs {
    /// Linear head to convert into an LDA checkpoint.
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// LDA checkpoint to convert into a linear head.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// identity or cov
    #[arg(long, default_value_t = SigmaMode::Identity)]
    pub sigma_mode: SigmaMode,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Training split.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Evaluation split.
    #[arg(long)]
    pub test: PathBuf,
    /// Linear head to initialize from; trained on the training split when absent.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long, default_value_t = SigmaMode::Identity)]
    pub sigma_mode: SigmaMode,
    #[arg(long, value_enum, default_value_t = AblationSchedule::Plastic)]
    pub schedule: AblationSchedule,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = Semantics::Chunk)]
    pub semantics: Semantics,
    /// Epochs for the initializing head when --head is absent.
    #[arg(long, default_value_t = 10)]
    pub fc_epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FcBaselineArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Validation split, logged per epoch; required by --converge.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Linear head to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f32,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f32,
    /// cosine or constant
    #[arg(long, default_value_t = Schedule::Cosine)]
    pub schedule: Schedule,
    /// Train until validation accuracy plateaus (at most 50 epochs).
    #[arg(long)]
    pub converge: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchTrainArgs {
    /// Class counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,50000")]
    pub classes: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    /// Training samples per class count (held fixed across the sweep).
    #[arg(long, default_value_t = 8192)]
    pub samples: usize,
    #[arg(long, default_value_t = 2048)]
    pub test_samples: usize,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub mean_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f32,
    /// Also time the FC head to convergence.
    #[arg(long)]
    pub converge: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchInferArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,50000")]
    pub classes: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
    /// Active classes (default n/10).
    #[arg(long)]
    pub k: Option<usize>,
    /// Hash tables (default 16).
    #[arg(long)]
    pub tables: Option<usize>,
    /// Hyperplanes per table (default 12 at 1000 classes, one more per
    /// factor of 4 beyond).
    #[arg(long)]
    pub bits: Option<usize>,
    /// Multi-probe depth (default 2).
    #[arg(long)]
    pub probes: Option<usize>,
    #[arg(long, default_value_t = 3.0)]
    pub mean_scale: f64,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Also emit one record per timed query.
    #[arg(long)]
    pub records: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    /// Output prefix: writes PREFIX.train.xemb, PREFIX.test.xemb and
    /// PREFIX.manifest.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 10)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    pub mean_scale: f64,
    /// identity or random_spd[:MIN:MAX]
    #[arg(long, default_value_t = CovarianceSpec::Identity)]
    pub covariance: CovarianceSpec,
    /// Draw class means with the within-class covariance.
    #[arg(long)]
    pub correlated_means: bool,
    #[arg(long, default_value_t = 20_000)]
    pub bayes_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<xlda_core::Error>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Convert(a) => commands::convert(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::FcBaseline(a) => commands::fc_baseline(&a),
        Command::BenchTrain(a) => commands::bench_train(&a),
        Command::BenchInfer(a) => commands::bench_infer(&a),
        Command::GenSynthetic(a) => commands::gen_synthetic(&a),
    }
}
