//! Pseudo-annotation by repeated scale-sampled detection, confidence
//! schedule and NMS merging, followed by detector adaptation.

use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, LoadedSequence};
use crate::detector::{adapt_prior, Detector, DetectorSpec, SurrogatePrior};
use crate::error::{Error, Result};
use crate::geometry::{nms_3d, Box3D, ScaleTriple};
use crate::scalesearch::{scale_and_detect, ScaleInterval};
use crate::seed::{self, Part};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "k")]
pub enum AnnotationMode {
    /// Single best scale.
    Ss,
    /// Interval spanned by the top-k scales.
    Ms(usize),
    /// Interval chosen without scoring (the whole search cube).
    Random,
}

impl std::fmt::Display for AnnotationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnnotationMode::Ss => f.write_str("SS"),
            AnnotationMode::Ms(k) => write!(f, "MS-{k}"),
            AnnotationMode::Random => f.write_str("random"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationConfig {
    pub mode: AnnotationMode,
    pub passes_per_threshold: usize,
    /// Strictly ascending confidence thresholds in [0, 1).
    pub thresholds: Vec<f64>,
    pub merge_iou: f64,
    pub rng_seed: u64,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self {
            mode: AnnotationMode::Ss,
            passes_per_threshold: 4,
            thresholds: vec![0.05, 0.1, 0.2, 0.3],
            merge_iou: 0.1,
            rng_seed: 0,
        }
    }
}

impl AnnotationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::InvalidInput("threshold schedule is empty".into()));
        }
        if self.thresholds.iter().any(|t| !(0.0..1.0).contains(t)) {
            return Err(Error::InvalidInput("thresholds must lie in [0, 1)".into()));
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("thresholds must be strictly ascending".into()));
        }
        if self.passes_per_threshold < 1 {
            return Err(Error::InvalidInput("passes_per_threshold must be >= 1".into()));
        }
        if !(self.merge_iou > 0.0 && self.merge_iou < 1.0) {
            return Err(Error::InvalidInput(format!("merge_iou {} outside (0, 1)", self.merge_iou)));
        }
        if let AnnotationMode::Ms(0) = self.mode {
            return Err(Error::InvalidInput("MS mode needs k >= 1".into()));
        }
        Ok(())
    }
}

/// Draws each component uniformly from its range.
pub fn sample_scale(interval: &ScaleInterval, rng: &mut impl Rng) -> ScaleTriple {
    let [x, y, z] = interval.ranges().map(|[lo, hi]| {
        let u: f64 = rng.random();
        lo + (hi - lo) * u
    });
    ScaleTriple { wx: x, wy: y, wz: z }
}

fn pass_seed(rng_seed: u64, pass: usize, sequence_id: &str, frame_id: &str) -> u64 {
    seed::derive(&[
        Part::Str("annotate"),
        Part::Int(rng_seed),
        Part::Int(pass as u64),
        Part::Str(sequence_id),
        Part::Str(frame_id),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    /// Indexed `[sequence][frame]`.
    pub labels: Vec<Vec<Vec<Box3D>>>,
    /// Boxes accumulated before the NMS merge.
    pub candidates: usize,
}

impl PseudoLabels {
    pub fn boxes(&self) -> impl Iterator<Item = &Box3D> {
        self.labels.iter().flatten().flatten()
    }

    pub fn box_count(&self) -> usize {
        self.boxes().count()
    }
}

/// Annotates every frame: for each threshold (ascending) run
/// `passes_per_threshold` passes, each sampling a fresh scale per frame from
/// `interval`, detecting and dropping boxes scored below the threshold; the
/// survivors of all passes are merged per frame by NMS.
pub fn annotate(
    sequences: &[LoadedSequence],
    detector: &dyn Detector,
    interval: &ScaleInterval,
    config: &AnnotationConfig,
) -> Result<PseudoLabels> {
    config.validate()?;
    interval.validate()?;
    if config.mode == AnnotationMode::Ss && !interval.is_degenerate() {
        return Err(Error::InvalidInput(
            "single-scale annotation requires a single scale".into(),
        ));
    }
    let items: Vec<(usize, usize)> = sequences
        .iter()
        .enumerate()
        .flat_map(|(qi, s)| (0..s.frames.len()).map(move |fi| (qi, fi)))
        .collect();
    let results: Vec<Result<(Vec<Box3D>, usize)>> = items
        .par_iter()
        .map(|&(qi, fi)| {
            let seq = &sequences[qi];
            let frame = &seq.frames[fi];
            let wrap = |e: Error| Error::Annotation {
                sequence: seq.sequence_id.clone(),
                frame: frame.frame_id.clone(),
                source: Box::new(e),
            };
            let mut accumulated = Vec::new();
            for (ti, &tau) in config.thresholds.iter().enumerate() {
                for p in 0..config.passes_per_threshold {
                    let pass = ti * config.passes_per_threshold + p;
                    let mut rng = seed::rng(pass_seed(config.rng_seed, pass, &seq.sequence_id, &frame.frame_id));
                    let w = sample_scale(interval, &mut rng);
                    let det_seed = rng.next_u64();
                    let dets = scale_and_detect(detector, &seq.sequence_id, frame, &w, det_seed).map_err(wrap)?;
                    accumulated.extend(dets.into_iter().filter(|b| b.score >= tau));
                }
            }
            let n = accumulated.len();
            Ok((nms_3d(&accumulated, config.merge_iou)?, n))
        })
        .collect();

    let mut labels: Vec<Vec<Vec<Box3D>>> = sequences.iter().map(|s| Vec::with_capacity(s.frames.len())).collect();
    let mut candidates = 0;
    for (r, &(qi, _)) in results.into_iter().zip(&items) {
        let (boxes, n) = r?;
        candidates += n;
        labels[qi].push(boxes);
    }
    Ok(PseudoLabels { labels, candidates })
}

/// Files emitted for an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoffRecord {
    pub label_root: PathBuf,
    pub files: Vec<PathBuf>,
    pub boxes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Adapted {
    Surrogate { prior: SurrogatePrior },
    Handoff(HandoffRecord),
}

/// Adapts a detector to pseudo-labels: the surrogate re-fits its size prior,
/// an external detector gets the labels written under `handoff_root`.
pub fn adapt(
    detector: &DetectorSpec,
    sequences: &[LoadedSequence],
    pseudo_labels: &[Vec<Vec<Box3D>>],
    handoff_root: &Path,
) -> Result<Adapted> {
    let n_boxes: usize = pseudo_labels.iter().flatten().map(Vec::len).sum();
    if n_boxes == 0 {
        return Err(Error::Adaptation("pseudo-label set is empty".into()));
    }
    match detector {
        DetectorSpec::Surrogate(prior) => Ok(Adapted::Surrogate {
            prior: adapt_prior(prior, pseudo_labels.iter().flatten().flatten())?,
        }),
        DetectorSpec::External(_) => {
            let files = dataio::write_label_tree(handoff_root, sequences, pseudo_labels)?;
            Ok(Adapted::Handoff(HandoffRecord {
                label_root: handoff_root.to_path_buf(),
                files,
                boxes: n_boxes,
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalesearch::interval_of;

    #[test]
    fn point_interval_sampling() {
        let w = ScaleTriple::new(1.3, 1.3, 1.15).unwrap();
        let iv = ScaleInterval::point(w);
        let mut rng = seed::rng(3);
        for _ in 0..100 {
            assert_eq!(sample_scale(&iv, &mut rng), w);
        }
    }

    #[test]
    fn uniform_sampling_statistics() {
        let iv = interval_of(vec![
            ScaleTriple::new(1.15, 1.15, 1.15).unwrap(),
            ScaleTriple::new(1.3, 1.3, 1.3).unwrap(),
        ]);
        let mut rng = seed::rng(11);
        let n = 10_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            let s = sample_scale(&iv, &mut rng);
            assert!(iv.contains(&s));
            for (acc, v) in sums.iter_mut().zip(s.as_array()) {
                *acc += v;
            }
        }
        // uniform on [1.15, 1.30]: mean 1.225, std 0.0433 -> standard error 4.3e-4
        for s in sums {
            assert!((s / n as f64 - 1.225).abs() < 0.005);
        }
    }

    #[test]
    fn config_validation() {
        assert!(AnnotationConfig::default().validate().is_ok());
        let bad = AnnotationConfig {
            thresholds: vec![0.2, 0.1],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AnnotationConfig {
            merge_iou: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AnnotationConfig {
            passes_per_threshold: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
