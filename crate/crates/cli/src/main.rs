//! `tacgraph`: generate synthetic tactile play data, pretrain the graph
//! encoder, evaluate, export embeddings and run gradient checks.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod defaults;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "tacgraph", version, about = "Force-based pretraining of a tactile graph encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic play-data set
    GenData(GenDataArgs),
    /// Pretrain the encoder on a dataset
    Pretrain(PretrainArgs),
    /// Evaluate a checkpoint against baselines
    Eval(EvalArgs),
    /// Export pooled per-frame embeddings
    Embed(EmbedArgs),
    /// Verify analytic gradients against finite differences
    GradCheck(GradCheckArgs),
    /// Print raw and canonical taxel coordinates per sensor
    ShowLayout(ShowLayoutArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Hand description JSON (built-in hand when omitted)
    #[arg(long, value_name = "PATH")]
    pub hand: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs sequentially, 0 uses every core
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output dataset path (default: <out>/dataset.jsonl)
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_name = "N", value_parser = positive_usize)]
    pub episodes: Option<usize>,
    /// Frames per episode
    #[arg(long, value_name = "N", value_parser = positive_usize)]
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input dataset (default: <out>/dataset.jsonl)
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_name = "N", value_parser = positive_usize)]
    pub epochs: Option<usize>,
    #[arg(long, value_name = "N", value_parser = positive_usize)]
    pub batch: Option<usize>,
    #[arg(long, value_name = "F", value_parser = positive_f64)]
    pub lr: Option<f64>,
    #[arg(long, value_name = "F", value_parser = unit_interval)]
    pub mask_ratio: Option<f64>,
    /// Weight of the net-force loss
    #[arg(long, value_name = "F", value_parser = non_negative_f64)]
    pub lambda: Option<f64>,
    #[arg(long, value_name = "N", value_parser = positive_usize)]
    pub hidden: Option<usize>,
    /// Encoder layers
    #[arg(long, value_name = "N", value_parser = positive_usize)]
    pub depth: Option<usize>,
    /// Use raw taxel coordinates instead of the canonical unit frame
    #[arg(long)]
    pub no_canonical: bool,
    /// Train on the masked-force loss only
    #[arg(long, conflicts_with = "net_only")]
    pub local_only: bool,
    /// Train on the net-force loss only
    #[arg(long)]
    pub net_only: bool,
    /// Also write a checkpoint every N epochs
    #[arg(long, value_name = "N")]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint (default: <out>/checkpoint.json)
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset (default: <out>/dataset.jsonl)
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// Embed only the first N frames
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of seeds per check
    #[arg(long, value_name = "N", value_parser = positive_u64)]
    pub seeds: Option<u64>,
    /// Maximum accepted relative error
    #[arg(long, value_name = "F", value_parser = positive_f64)]
    pub threshold: Option<f64>,
    /// Finite-difference step
    #[arg(long, value_name = "F", value_parser = positive_f64)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ShowLayoutArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("expected an integer >= 1, got {s:?}")),
    }
}

fn positive_u64(s: &str) -> Result<u64, String> {
    match s.parse::<u64>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("expected an integer >= 1, got {s:?}")),
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("expected a finite number, got {s:?}"))
}

fn positive_f64(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| if v > 0.0 { Ok(v) } else { Err(format!("expected a value > 0, got {s}")) })
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| if v >= 0.0 { Ok(v) } else { Err(format!("expected a value >= 0, got {s}")) })
}

fn unit_interval(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| {
        if v > 0.0 && v <= 1.0 {
            Ok(v)
        } else {
            Err(format!("expected a value in (0, 1], got {s}"))
        }
    })
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TACGRAPH_LOG", "info"))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Eval(a) => commands::eval(a),
        Command::Embed(a) => commands::embed(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::ShowLayout(a) => commands::show_layout(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
