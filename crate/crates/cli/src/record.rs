//! JSON documents written by the subcommands.

use std::collections::BTreeMap;
use std::path::PathBuf;

use scaleadapt_core::detector::DetectorSpec;
use scaleadapt_core::eval::EvalReport;
use scaleadapt_core::experiment::EvalRow;
use scaleadapt_core::pseudolabel::{AnnotationConfig, HandoffRecord};
use scaleadapt_core::scalesearch::ScaleInterval;
use scaleadapt_core::scoring::{Metric, ScaleScore};
use scaleadapt_core::seed::{self, Part};
use scaleadapt_core::ScaleTriple;
use serde::{Deserialize, Serialize};

/// Identifier derived from the command and its resolved configuration, so
/// identical invocations produce identical records.
pub fn run_id(command: &str, config: &serde_json::Value) -> String {
    let text = config.to_string();
    format!("{:016x}", seed::derive(&[Part::Str(command), Part::Str(&text)]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub epsilon: f64,
    pub steps_per_axis: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub k: usize,
    pub interval: ScaleInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub score_table: PathBuf,
    pub top1: ScaleTriple,
    pub top1_score: f64,
    pub top_k: Vec<TopK>,
    /// Ascending by score.
    pub ranked: Vec<ScaleScore>,
}

/// `summary.json` of scale-search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub run_id: String,
    pub command: String,
    pub config: serde_json::Value,
    pub detector: DetectorSpec,
    pub grid: GridInfo,
    pub metrics: Vec<MetricSummary>,
    pub timings_file: PathBuf,
}

/// `run_record.json` of pseudo-label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub command: String,
    pub config: serde_json::Value,
    pub detector: DetectorSpec,
    pub annotation: AnnotationConfig,
    /// How the scale input was chosen: summary, explicit, identity, uniform or supervised.
    pub scale_source: String,
    pub selected_scale: Option<ScaleTriple>,
    pub interval: ScaleInterval,
    pub summary: Option<PathBuf>,
    pub pseudo_label_root: PathBuf,
    pub label_files: usize,
    pub candidates: usize,
    pub boxes: usize,
    pub timings_file: PathBuf,
}

/// Report of adapt-eval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptEvalRecord {
    pub run_id: String,
    pub command: String,
    pub config: serde_json::Value,
    pub detector: DetectorSpec,
    pub pseudo_label_root: PathBuf,
    pub pseudo_label_boxes: usize,
    pub rows: Vec<EvalRow>,
    pub gap_closure: Option<f64>,
    pub handoff: Option<HandoffRecord>,
}

/// Report of eval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub command: String,
    pub config: serde_json::Value,
    pub report: EvalReport,
}

/// Wall-clock seconds per phase; kept apart from the records so those stay
/// byte-identical across runs.
pub type Timings = BTreeMap<String, f64>;
