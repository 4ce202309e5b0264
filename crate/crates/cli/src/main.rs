//! `riskplan`: dataset generation, model training, planning and evaluation.
//!
//! Every subcommand takes `--config FILE` (TOML, or JSON by extension) whose
//! keys are the long flag names with `_` for `-`. Flags override the file,
//! which overrides the built-in defaults. `RISKPLAN_SEED` and
//! `RISKPLAN_JOBS` stand in for `--seed` and `--jobs`.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 on
//! runtime failures.

mod commands;
mod io;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use settings::{resolve, UsageError};

#[derive(Parser)]
#[command(name = "riskplan", version, about = "Risk-bounded motion planning with a stochastic distance model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample configurations and workspace points with noisy link distances.
    GenDataset(GenDatasetArgs),
    /// Fit the stochastic distance network; writes a checkpoint and a loss CSV.
    Train(TrainArgs),
    /// Per-link μ/σ errors on points around the waypoints of planned paths.
    EvalModel(EvalModelArgs),
    /// Perturbed tabletop problems.
    GenProblems(GenProblemsArgs),
    /// Candidate path plus chance-constrained tracking for one problem.
    Plan(PlanArgs),
    /// Radius-inflation baseline path for one problem.
    Baseline(BaselineArgs),
    /// Proposed planner against the inflation baselines on a problem set.
    Evaluate(EvaluateArgs),
    /// Risk CDF, per-problem snapshots and a markdown summary.
    Report(ReportArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Args, Serialize)]
struct GenDatasetArgs {
    /// TOML or JSON file with defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output dataset file.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Built-in chain: planar or spatial [default: planar].
    #[arg(long)]
    robot: Option<String>,
    /// Chain JSON file; overrides --robot.
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Size preset: desk or full [default: desk].
    #[arg(long)]
    preset: Option<String>,
    /// Number of configurations (overrides the preset).
    #[arg(long)]
    configs: Option<usize>,
    /// Noisy draws per point and link (overrides the preset).
    #[arg(long)]
    draws: Option<usize>,
    /// Sensor noise (meters) [default: 0.02].
    #[arg(long)]
    sigma: Option<f64>,
    /// Half-width of the sampled workspace box [default: reach + 0.1].
    #[arg(long)]
    half_extent: Option<f64>,
    #[arg(long, env = "RISKPLAN_SEED")]
    seed: Option<u64>,
    /// Worker threads [default: 1].
    #[arg(long, env = "RISKPLAN_JOBS")]
    jobs: Option<usize>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// TOML or JSON file with defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Dataset written by gen-dataset.
    #[arg(short, long)]
    dataset: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Loss trace CSV [default: <out>.loss.csv].
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Hyperparameter preset: desk (200 epochs, lr 1e-3, batch 256) or full
    /// (500, 1e-4, 512, 256-unit layers) [default: desk].
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Final / initial learning rate of the cosine schedule.
    #[arg(long)]
    lr_final_ratio: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    kl_weight: Option<f64>,
    #[arg(long, env = "RISKPLAN_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct EvalModelArgs {
    /// TOML or JSON file with defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Checkpoint written by train.
    #[arg(short, long)]
    model: Option<PathBuf>,
    /// Problem set whose candidate paths supply the waypoints [default: a
    /// fresh tabletop set].
    #[arg(long)]
    problems: Option<PathBuf>,
    /// Output CSV table [default: stdout].
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Built-in chain when no problem set is given [default: planar].
    #[arg(long)]
    robot: Option<String>,
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Number of discretized paths [default: 100].
    #[arg(long)]
    paths: Option<usize>,
    /// Noisy draws per held-out point [default: 5].
    #[arg(long)]
    draws: Option<usize>,
    /// Sensor noise (meters) [default: 0.02].
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    half_extent: Option<f64>,
    /// [default: 1]
    #[arg(long, env = "RISKPLAN_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "RISKPLAN_JOBS")]
    jobs: Option<usize>,
}

#[derive(Args, Serialize)]
struct GenProblemsArgs {
    /// TOML or JSON file with defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output problem set (JSON).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Built-in chain: planar or spatial [default: planar].
    #[arg(long)]
    robot: Option<String>,
    #[arg(long)]
    chain: Option<PathBuf>,
    /// [default: 30]
    #[arg(long)]
    count: Option<usize>,
    /// Noise on sensed spheres (meters) [default: 0.02].
    #[arg(long)]
    sigma: Option<f64>,
    /// Jitter preset: standard or none [default: standard].
    #[arg(long)]
    perturbation: Option<String>,
    #[arg(long, env = "RISKPLAN_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct PlanArgs {
    /// TOML or JSON file with defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    problems: Option<PathBuf>,
    /// Checkpoint written by train.
    #[arg(short, long)]
    model: Option<PathBuf>,
    /// Use exact link distances with the scene's noise instead of a model.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    exact: bool,
    /// Problem id [default: 0].
    #[arg(long)]
    id: Option<usize>,
    /// Output safe path (JSON).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write the discretized candidate path here.
    #[arg(long)]
    candidate_out: Option<PathBuf>,
    /// Per-step log (JSON lines) [default: <out>.log.jsonl].
    #[arg(long)]
    log: Option<PathBuf>,
    /// Path risk bound [default: 0.10].
    #[arg(long)]
    delta: Option<f64>,
    /// Candidate planning attempts [default: 15].
    #[arg(long)]
    attempts: Option<usize>,
    /// Waypoint spacing in radians [default: 0.15].
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long, env = "RISKPLAN_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct BaselineArgs {
    /// TOML or JSON file with defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    problems: Option<PathBuf>,
    /// Problem id [default: 0].
    #[arg(long)]
    id: Option<usize>,
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Radius inflation ratio [default: 0].
    #[arg(long)]
    ratio: Option<f64>,
    /// [default: 15]
    #[arg(long)]
    attempts: Option<usize>,
    /// [default: 0.15]
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long, env = "RISKPLAN_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    /// TOML or JSON file with defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    problems: Option<PathBuf>,
    #[arg(short, long)]
    model: Option<PathBuf>,
    /// Use exact link distances with the scene's noise instead of a model.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    exact: bool,
    /// Report CSV; `.timings.csv`, `.json` and `.config.json` go next to it.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// MC samples per path [default: 5000].
    #[arg(long)]
    samples: Option<usize>,
    /// Inflation ratios, comma separated [default: 0,0.2,0.4,0.6].
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// [default: 0.10]
    #[arg(long)]
    delta: Option<f64>,
    /// [default: 15]
    #[arg(long)]
    attempts: Option<usize>,
    /// [default: 0.15]
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long, env = "RISKPLAN_SEED")]
    seed: Option<u64>,
    /// Problems planned in parallel [default: 1].
    #[arg(long, env = "RISKPLAN_JOBS")]
    jobs: Option<usize>,
}

#[derive(Args, Serialize)]
struct ReportArgs {
    /// TOML or JSON file with defaults for these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// `<report>.csv.json` written by evaluate.
    #[arg(short, long)]
    bench: Option<PathBuf>,
    /// Problem set, for the scene snapshots.
    #[arg(short, long)]
    problems: Option<PathBuf>,
    #[arg(short, long)]
    out_dir: Option<PathBuf>,
    /// Problems drawn with their paths [default: 3].
    #[arg(long)]
    snapshots: Option<usize>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenDataset(a) => commands::gen_dataset(resolve(a.config.as_deref(), &a)?),
        Command::Train(a) => commands::train_cmd(resolve(a.config.as_deref(), &a)?),
        Command::EvalModel(a) => commands::eval_model(resolve(a.config.as_deref(), &a)?),
        Command::GenProblems(a) => commands::gen_problems(resolve(a.config.as_deref(), &a)?),
        Command::Plan(a) => commands::plan(resolve(a.config.as_deref(), &a)?),
        Command::Baseline(a) => commands::baseline(resolve(a.config.as_deref(), &a)?),
        Command::Evaluate(a) => commands::evaluate(resolve(a.config.as_deref(), &a)?),
        Command::Report(a) => commands::report(resolve(a.config.as_deref(), &a)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<riskplan::Error>(), Some(riskplan::Error::Argument(_)));
            let kind = if usage { "usage" } else { "runtime" };
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", serde_json::json!({ "error": kind, "message": chain.join(": ") }));
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
