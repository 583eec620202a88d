//! `shapedeform` command-line tool.
//!
//! Exit codes: 0 on success, 1 on a runtime error, 2 on a usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shapedeform::datagen::TemplateKind;
use shapedeform::losses::ChamferMode;
use shapedeform::training::TrainingMode;

#[derive(Debug, Parser)]
#[command(name = "shapedeform", version, about = "Shape correspondence by template deformation")]
pub struct Cli {
    /// Worker threads for data-parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate posed shapes with known correspondences.
    GenData(GenDataArgs),
    /// Train the encoder and decoder on a generated dataset.
    Train(TrainArgs),
    /// Match two shapes through the template.
    Match(MatchArgs),
    /// Score predicted correspondences against a dataset pair.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_parser = parse_kind)]
    pub kind: TemplateKind,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Template subdivision level, 0 to 4.
    #[arg(long, default_value_t = 0)]
    pub resolution: usize,
    /// Fraction of shapes drawn with widened limb bounds.
    #[arg(long, default_value_t = 0.0)]
    pub hard_probability: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TrainingMode>,
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for the checkpoint, loss log, config and template.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs_phase1: Option<usize>,
    #[arg(long)]
    pub epochs_phase2: Option<usize>,
    #[arg(long)]
    pub lr_phase1: Option<f64>,
    #[arg(long)]
    pub lr_phase2: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub points_per_shape: Option<usize>,
    #[arg(long)]
    pub lambda_lap: Option<f64>,
    #[arg(long)]
    pub lambda_edges: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Reference shape (OBJ or PLY).
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Correspondence CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Template mesh; defaults to `template.ply` next to the checkpoint.
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub orientations: Option<usize>,
    #[arg(long)]
    pub refine_iters: Option<usize>,
    #[arg(long)]
    pub refine_lr: Option<f64>,
    #[arg(long, value_parser = parse_chamfer)]
    pub chamfer_mode: Option<ChamferMode>,
    #[arg(long)]
    pub template_res: Option<usize>,
    /// Directory for vertex-colored copies of both shapes.
    #[arg(long)]
    pub color_out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Correspondence CSV from `match`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Dataset manifest holding the reference and target shapes.
    #[arg(long)]
    pub truth: PathBuf,
    /// Reference and target shape indices in the manifest, e.g. `3,7`.
    #[arg(long, value_parser = parse_pair)]
    pub pair: (usize, usize),
    /// Per-pair error CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<TemplateKind, String> {
    s.parse().map_err(|e: shapedeform::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<TrainingMode, String> {
    s.parse().map_err(|e: shapedeform::Error| e.to_string())
}

fn parse_chamfer(s: &str) -> Result<ChamferMode, String> {
    match s {
        "symmetric" => Ok(ChamferMode::Symmetric),
        "a_to_b" => Ok(ChamferMode::AToB),
        "b_to_a" => Ok(ChamferMode::BToA),
        _ => Err(format!("expected symmetric, a_to_b or b_to_a, got {s:?}")),
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected I,J, got {s:?}"))?;
    let num = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((num(a)?, num(b)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
