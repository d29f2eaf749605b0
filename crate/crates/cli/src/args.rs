use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "scaleadapt", version, about = "Scale search and pseudo-labeling for LiDAR car detectors")]
pub struct Cli {
    /// Worker threads for the scale sweep and pseudo-labeling.
    /// Results do not depend on this value.
    #[arg(long, global = true, env = "SCALEADAPT_WORKERS")]
    pub workers: Option<usize>,

    /// TOML file whose values override command-line flags. Keys go in a table
    /// named after the subcommand, e.g. `[scale-search] epsilon = 0.2`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (clouds, ground-truth labels, manifest).
    Simulate(SimulateArgs),
    /// Score every grid scale by temporal coherency of tracked detections.
    ScaleSearch(ScaleSearchArgs),
    /// Produce pseudo-labels at the selected scale or scale interval.
    PseudoLabel(PseudoLabelArgs),
    /// Adapt the detector to pseudo-labels and evaluate source, adapted and oracle.
    AdaptEval(AdaptEvalArgs),
    /// Evaluate a label tree of detections against ground truth.
    Eval(EvalArgs),
    /// Print gnuplot-ready columns from a summary or evaluation report.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::ScaleSearch(_) => "scale-search",
            Command::PseudoLabel(_) => "pseudo-label",
            Command::AdaptEval(_) => "adapt-eval",
            Command::Eval(_) => "eval",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// World preset: source-like or target-like.
    #[arg(long, default_value = "source-like")]
    pub preset: String,
    /// TOML world configuration; replaces the preset.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of sequences (overrides preset/scenario).
    #[arg(long)]
    pub sequences: Option<usize>,
    /// Frames per sequence (overrides preset/scenario).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DetectorArgs {
    /// `surrogate`, `surrogate:<preset>` (prior sized like a world preset) or a
    /// TOML detector spec file.
    #[arg(long, default_value = "surrogate")]
    pub detector: String,
    /// Seed for the surrogate detector and all sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScaleSearchArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub detector: DetectorArgs,
    /// Grid half-width around 1 on each axis.
    #[arg(long, default_value_t = 0.3)]
    pub epsilon: f64,
    /// Grid points per axis.
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    /// Scoring metric (mvv_star, mvv, tex); repeat for several tables.
    #[arg(long = "metric", default_values_t = vec!["mvv_star".to_string()])]
    pub metrics: Vec<String>,
    /// Top-k interval sizes to report; repeatable.
    #[arg(long = "top-k", default_values_t = vec![3usize])]
    pub top_k: Vec<usize>,
    /// Minimum track length counted by MVV.
    #[arg(long, default_value_t = 5)]
    pub min_track_len: usize,
    /// Penalty for sequences without eligible tracks, m³.
    #[arg(long, default_value_t = 5.0)]
    pub h_star: f64,
    /// Score raw matched detections instead of filtered track boxes.
    #[arg(long)]
    pub raw_track_boxes: bool,
    /// Output directory for score tables and summary.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Ss,
    Ms,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PseudoLabelArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub detector: DetectorArgs,
    /// summary.json written by scale-search.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Which metric's ranking to use from the summary (default: its first).
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long, value_enum, default_value = "ms")]
    pub mode: ModeArg,
    /// Number of top scales spanning the multi-scale interval.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Explicit single scale `wx,wy,wz` instead of a summary.
    #[arg(long)]
    pub scale: Option<String>,
    /// Ablation: label at the identity scale.
    #[arg(long)]
    pub no_scale: bool,
    /// Ablation: sample scales uniformly from the search cube, no scoring.
    #[arg(long)]
    pub no_score: bool,
    /// Ablation: label at a known scale `wx,wy,wz`.
    #[arg(long)]
    pub sup_scale: Option<String>,
    /// Half-width of the cube sampled by --no-score.
    #[arg(long, default_value_t = 0.3)]
    pub epsilon: f64,
    /// Passes per confidence threshold.
    #[arg(long, default_value_t = 4)]
    pub passes: usize,
    /// Ascending confidence thresholds, comma separated.
    #[arg(long, default_value = "0.05,0.1,0.2,0.3")]
    pub thresholds: String,
    /// NMS IoU used to merge passes.
    #[arg(long, default_value_t = 0.1)]
    pub merge_iou: f64,
    /// Output directory; labels go under `<out>/labels`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AdaptEvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub detector: DetectorArgs,
    /// Root of the pseudo-label tree (`<root>/<sequence>/<frame>.txt`).
    #[arg(long)]
    pub pseudo_labels: PathBuf,
    /// Root of a ground-truth label tree; defaults to the manifest's labels.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Use 11-point instead of 40-point AP interpolation.
    #[arg(long)]
    pub eleven_point: bool,
    /// Output JSON report path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Manifest listing the frames to evaluate.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Root of the detection label tree.
    #[arg(long)]
    pub det: PathBuf,
    /// Root of a ground-truth label tree; defaults to the manifest's labels.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub eleven_point: bool,
    /// Output JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// summary.json from scale-search or a report from adapt-eval / eval.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
