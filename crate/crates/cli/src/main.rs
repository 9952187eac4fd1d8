//! Command-line frontend for the influence pipeline.
//!
//! Subcommands cover the full flow: `synth` generates data, `train`
//! produces a checkpoint run, `score` writes influence CSVs, `prune` /
//! `mix` / `render` build the instruct set, `eval` and `oracle` measure the
//! result, `gradcheck` validates gradients, and `validate-finetune` checks
//! a fine-tune config manifest.
//!
//! Every command accepts `--config <json>` whose keys mirror the long flag
//! names; explicit flags win. Exit codes: 0 success, 2 usage errors
//! (unknown flags, missing files, schema violations), 1 runtime errors.
//! `TRACSEQ_THREADS` caps the worker pool (0 or unset = automatic).

mod commands;
mod manifest;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use util::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "tracseq", version, about = "Influence-driven data pruning pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON config file; keys mirror the long flag names, flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output dataset JSONL.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_users: Option<usize>,
    #[arg(long)]
    pub steps_per_user: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Fraction of labels to flip, in [0, 1).
    #[arg(long)]
    pub noise_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset to split.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out_train: Option<PathBuf>,
    #[arg(long)]
    pub out_val: Option<PathBuf>,
    #[arg(long)]
    pub out_test: Option<PathBuf>,
    /// Fractions summing to 1; floor-rounded sizes, remainder to train.
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Model kind: logistic | mlp.
    #[arg(long)]
    pub model: Option<String>,
    /// Comma-separated hidden widths for mlp, e.g. 8,4.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Defaults to --seed.
    #[arg(long)]
    pub init_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainOptArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Schedule: constant | cosine.
    #[arg(long)]
    pub lr_schedule: Option<String>,
    /// Step size for the constant schedule.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Cosine schedule bounds.
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Shuffle seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training dataset JSONL.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainOptArgs,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint run directory.
    #[arg(long)]
    pub ckpts: Option<PathBuf>,
    /// Training dataset to score.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Eval dataset JSONL (unused with --self-influence).
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Output scores CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Decay factor in (0, 1].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Decay clock: step | timestamp.
    #[arg(long)]
    pub time_axis: Option<String>,
    /// Explicit reference time T.
    #[arg(long)]
    pub reference_time: Option<i64>,
    /// Estimator: tracseq | tracincp (forces gamma = 1).
    #[arg(long)]
    pub estimator: Option<String>,
    /// Also write the per-checkpoint breakdown JSONL here.
    #[arg(long)]
    pub breakdown: Option<PathBuf>,
    /// Score each training sample against itself instead of an eval set.
    #[arg(long)]
    pub self_influence: bool,
}

#[derive(Args, Debug)]
pub struct PruneArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scores CSV from the score command.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Output file: one selected id per line, best first.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Absolute k (conflicts with --k-frac).
    #[arg(long)]
    pub k: Option<usize>,
    /// Fractional k in (0, 1], resolved as ceil(frac * n).
    #[arg(long)]
    pub k_frac: Option<f64>,
}

#[derive(Args, Debug)]
pub struct MixArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Pruned id file from the prune command.
    #[arg(long)]
    pub topk: Option<PathBuf>,
    /// Output mix plan JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// High-influence share of the mix.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Total mixed samples.
    #[arg(long)]
    pub total: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Mix plan JSON.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Output instruct JSONL.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Template task: sentiment | classification | qa.
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ckpts: Option<PathBuf>,
    /// Labeled dataset to evaluate on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output metric report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// F1 averaging: binary | macro.
    #[arg(long)]
    pub f1_mode: Option<String>,
    /// Positive class for binary F1 and the KS split.
    #[arg(long)]
    pub pos_class: Option<usize>,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training dataset (capped; see --cap).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Output CSV: sample_id,base_loss,loo_loss,delta.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainOptArgs,
    /// Retraining cap override (default 256).
    #[arg(long)]
    pub cap: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Random (params, sample) instances to check.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Relative finite-difference step.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optional JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit nonzero when the worst relative error exceeds this.
    #[arg(long)]
    pub fail_above: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ValidateFinetuneArgs {
    #[command(flatten)]
    pub common: Common,
    /// Fine-tune manifest JSON.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Optionally re-emit the validated manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic behavior-sequence dataset with known labels.
    Synth(SynthArgs),
    /// Deterministically split a dataset into train/val/test files.
    Split(SplitArgs),
    /// Run SGD and persist a checkpoint directory.
    Train(TrainArgs),
    /// Score training samples against an eval set (or themselves).
    Score(ScoreArgs),
    /// Select the top-k ids from a scores CSV.
    Prune(PruneArgs),
    /// Compose a high-influence + random mix plan.
    Mix(MixArgs),
    /// Render a mix plan into instruct JSONL.
    Render(RenderArgs),
    /// Evaluate a trained checkpoint: accuracy, F1, miss, KS.
    Eval(EvalArgs),
    /// Leave-one-out retraining oracle.
    Oracle(OracleArgs),
    /// Finite-difference validation of analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Validate a fine-tune configuration manifest.
    ValidateFinetune(ValidateFinetuneArgs),
}

#[cfg(feature = "parallel")]
fn init_thread_pool() -> CliResult<()> {
    let Ok(raw) = std::env::var("TRACSEQ_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        CliError::usage(format!("TRACSEQ_THREADS must be a nonnegative integer, got \"{raw}\""))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("thread pool setup failed: {e}")))?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn init_thread_pool() -> CliResult<()> {
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_thread_pool()?;
    match cli.command {
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Split(args) => commands::cmd_split(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Score(args) => commands::cmd_score(args),
        Command::Prune(args) => commands::cmd_prune(args),
        Command::Mix(args) => commands::cmd_mix(args),
        Command::Render(args) => commands::cmd_render(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Oracle(args) => commands::cmd_oracle(args),
        Command::Gradcheck(args) => commands::cmd_gradcheck(args),
        Command::ValidateFinetune(args) => commands::cmd_validate_finetune(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
