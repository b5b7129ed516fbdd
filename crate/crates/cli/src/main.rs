mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Efficient multimodal transformer experiments: data, CV splits, training,
/// parameter-isolation sweeps and ablations.
#[derive(Debug, Parser)]
#[command(name = "husformer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Shuffle once and write the 10-fold table and per-fold index files.
    Split(SplitArgs),
    /// Cross-validate one configuration and print its metrics row.
    Train(TrainArgs),
    /// Run the one-at-a-time sweep over the search space.
    Sweep(PlanArgs),
    /// Run the ablation plan built from local optima.
    Ablate(AblateArgs),
    /// Print the analytic parameter breakdown without training.
    Params(ParamsArgs),
    /// Finite-difference check of the minimal model's gradients.
    Gradcheck(GradcheckArgs),
    /// Merge trial CSVs into one CSV plus Markdown table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    modalities: usize,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    channels: usize,
    #[arg(long, default_value_t = 16)]
    timesteps: usize,
    #[arg(long, default_value_t = 5.0)]
    separability: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Dataset directory; its fold table is rewritten.
    #[arg(long, required_unless_present = "n")]
    data: Option<PathBuf>,
    /// Sample count, to split indices without a dataset.
    #[arg(long, conflicts_with = "data")]
    n: Option<usize>,
    /// Where `fold_<i>.json` files go; defaults to the dataset directory.
    #[arg(long, required_unless_present = "data")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 24)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.8)]
    clip: f64,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    /// Train only the first k folds.
    #[arg(long)]
    max_folds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    layers: usize,
    #[arg(long, default_value_t = 3)]
    heads: usize,
    #[arg(long, default_value_t = 30)]
    dm: usize,
    #[arg(long, default_value_t = 120)]
    ffn: usize,
    #[command(flatten)]
    train: TrainFlags,
    /// Folds to train concurrently.
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Directory for per-fold training curves (`history_fold<i>.csv`).
    #[arg(long)]
    history_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Dataset directory with a fold table.
    #[arg(long, required_unless_present = "manifest")]
    data: Option<PathBuf>,
    /// Output directory for results.csv, results.md and manifest.json.
    #[arg(long, required_unless_present = "manifest")]
    out: Option<PathBuf>,
    /// Experiment manifest; replaces every other option except parallelism.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long)]
    opt_layers: Option<usize>,
    #[arg(long)]
    opt_heads: Option<usize>,
    #[arg(long)]
    opt_dm: Option<usize>,
    #[arg(long)]
    opt_ffn: Option<usize>,
}

#[derive(Debug, Args)]
struct ParamsArgs {
    #[arg(long, default_value_t = 6)]
    modalities: usize,
    #[arg(long, default_value_t = 5)]
    layers: usize,
    #[arg(long, default_value_t = 3)]
    heads: usize,
    #[arg(long, default_value_t = 30)]
    dm: usize,
    #[arg(long, default_value_t = 120)]
    ffn: usize,
    /// Input channels per modality (front-end overhead only).
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 16)]
    timesteps: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Print JSON instead of `key value` lines.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Trial CSVs written by sweep or ablate.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Merged CSV path; the Markdown twin gets the `.md` extension.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("error: usage-error: {first}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.downcast_ref::<husformer::Error>().map_or("runtime-error", |e| e.class());
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {class}: {msg}");
            ExitCode::FAILURE
        }
    }
}
