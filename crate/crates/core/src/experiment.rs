//! Evaluation of a surrogate detector before and after adaptation, with a
//! target-oracle upper bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::LoadedSequence;
use crate::detector::{adapt_prior, Detector, SurrogateDetector, SurrogatePrior};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::geometry::{Box3D, ScaleTriple};
use crate::scalesearch::scale_and_detect;
use crate::seed::{self, Part};

/// Ground truth of every frame, flattened across sequences.
pub fn truth_frames(sequences: &[LoadedSequence]) -> Vec<Vec<Box3D>> {
    sequences
        .iter()
        .flat_map(|s| s.frames.iter().map(|f| f.truth.clone()))
        .collect()
}

/// Unscaled detections of every frame, flattened across sequences.
pub fn detect_all(detector: &dyn Detector, sequences: &[LoadedSequence], eval_seed: u64) -> Result<Vec<Vec<Box3D>>> {
    let items: Vec<(usize, usize)> = sequences
        .iter()
        .enumerate()
        .flat_map(|(qi, s)| (0..s.frames.len()).map(move |fi| (qi, fi)))
        .collect();
    items
        .par_iter()
        .map(|&(qi, fi)| {
            let seq = &sequences[qi];
            let frame = &seq.frames[fi];
            let seed = seed::derive(&[
                Part::Str("eval"),
                Part::Int(eval_seed),
                Part::Str(&seq.sequence_id),
                Part::Str(&frame.frame_id),
            ]);
            scale_and_detect(detector, &seq.sequence_id, frame, &ScaleTriple::IDENTITY, seed)
        })
        .collect()
}

pub fn evaluate_detector(
    detector: &dyn Detector,
    sequences: &[LoadedSequence],
    config: &EvalConfig,
    eval_seed: u64,
) -> Result<EvalReport> {
    let gt = truth_frames(sequences);
    let det = detect_all(detector, sequences, eval_seed)?;
    evaluate(&gt, &det, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    /// Prior size of a surrogate detector.
    pub mean_dims: Option<[f64; 3]>,
    pub report: EvalReport,
}

impl EvalRow {
    /// IoU Avg-AP, zero when no band has ground truth.
    pub fn avg_ap(&self) -> f64 {
        self.report.iou.average.unwrap_or(0.0)
    }
}

/// Source, adapted and target-oracle rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptEvalReport {
    pub source: EvalRow,
    pub adapted: EvalRow,
    pub oracle: EvalRow,
}

impl AdaptEvalReport {
    /// Fraction of the (oracle − source) Avg-AP gap closed by adaptation.
    pub fn gap_closure(&self) -> Option<f64> {
        let gap = self.oracle.avg_ap() - self.source.avg_ap();
        (gap > 0.0).then(|| (self.adapted.avg_ap() - self.source.avg_ap()) / gap)
    }
}

pub fn evaluate_prior(
    name: &str,
    prior: &SurrogatePrior,
    sequences: &[LoadedSequence],
    config: &EvalConfig,
    eval_seed: u64,
) -> Result<EvalRow> {
    let detector = SurrogateDetector::new(*prior)?;
    Ok(EvalRow {
        name: name.to_string(),
        mean_dims: Some(prior.mean_dims),
        report: evaluate_detector(&detector, sequences, config, eval_seed)?,
    })
}

/// Evaluates `prior` as-is, re-fit to `pseudo_labels`, and re-fit to the
/// ground truth of `sequences`.
pub fn adapt_eval(
    prior: &SurrogatePrior,
    sequences: &[LoadedSequence],
    pseudo_labels: &[Vec<Vec<Box3D>>],
    config: &EvalConfig,
    eval_seed: u64,
) -> Result<AdaptEvalReport> {
    if pseudo_labels.iter().flatten().all(Vec::is_empty) {
        return Err(Error::Adaptation("pseudo-label set is empty".into()));
    }
    let adapted = adapt_prior(prior, pseudo_labels.iter().flatten().flatten())?;
    let gt = truth_frames(sequences);
    let oracle = adapt_prior(prior, gt.iter().flatten())
        .map_err(|_| Error::Eval("evaluation set has zero ground-truth boxes".into()))?;
    Ok(AdaptEvalReport {
        source: evaluate_prior("source", prior, sequences, config, eval_seed)?,
        adapted: evaluate_prior("adapted", &adapted, sequences, config, eval_seed)?,
        oracle: evaluate_prior("target_oracle", &oracle, sequences, config, eval_seed)?,
    })
}
