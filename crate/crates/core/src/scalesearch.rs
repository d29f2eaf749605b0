//! Scale grid, scale-and-detect sweep and the top-K scale interval.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, FrameDetections, LoadedFrame, LoadedSequence};
use crate::detector::{Detector, FrameContext};
use crate::error::{Error, Result};
use crate::geometry::{rescale_box, scale_box, scale_cloud, Box3D, ScaleTriple};
use crate::scoring::{score_scale, ScaleScore, ScoringConfig, SequenceTracks};
use crate::seed::{self, Part};
use crate::tracking::{run_tracker, TrackerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    pub epsilon: f64,
    pub steps_per_axis: usize,
    /// Cartesian cube of the per-axis values, x outermost.
    pub scales: Vec<ScaleTriple>,
}

impl ScaleGrid {
    pub fn axis_values(epsilon: f64, steps: usize) -> Vec<f64> {
        (0..steps)
            .map(|i| 1.0 + epsilon * (2.0 * i as f64 / (steps - 1) as f64 - 1.0))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// A grid of explicitly listed scales.
    pub fn from_scales(scales: Vec<ScaleTriple>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidInput("scale list is empty".into()));
        }
        for s in &scales {
            s.validate()?;
        }
        let epsilon = scales
            .iter()
            .flat_map(|s| s.as_array())
            .map(|v| (v - 1.0).abs())
            .fold(0.0, f64::max);
        Ok(Self {
            epsilon,
            steps_per_axis: 0,
            scales,
        })
    }
}

/// Regular grid over `[1 - epsilon, 1 + epsilon]³` with endpoints included.
pub fn build_grid(epsilon: f64, steps_per_axis: usize) -> Result<ScaleGrid> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Validation(format!("epsilon {epsilon} outside (0, 1)")));
    }
    if steps_per_axis < 2 {
        return Err(Error::Validation(format!(
            "steps_per_axis must be >= 2, got {steps_per_axis}"
        )));
    }
    let values = ScaleGrid::axis_values(epsilon, steps_per_axis);
    let mut scales = Vec::with_capacity(values.len().pow(3));
    for &wx in &values {
        for &wy in &values {
            for &wz in &values {
                scales.push(ScaleTriple { wx, wy, wz });
            }
        }
    }
    Ok(ScaleGrid {
        epsilon,
        steps_per_axis,
        scales,
    })
}

/// Closed per-axis ranges, plus the scales they were built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleInterval {
    pub wx_range: [f64; 2],
    pub wy_range: [f64; 2],
    pub wz_range: [f64; 2],
    pub source_scales: Vec<ScaleTriple>,
}

impl ScaleInterval {
    pub fn point(scale: ScaleTriple) -> Self {
        Self {
            wx_range: [scale.wx; 2],
            wy_range: [scale.wy; 2],
            wz_range: [scale.wz; 2],
            source_scales: vec![scale],
        }
    }

    /// The full cube `[1 - epsilon, 1 + epsilon]³`.
    pub fn cube(epsilon: f64) -> Self {
        let r = [1.0 - epsilon, 1.0 + epsilon];
        Self {
            wx_range: r,
            wy_range: r,
            wz_range: r,
            source_scales: Vec::new(),
        }
    }

    pub fn ranges(&self) -> [[f64; 2]; 3] {
        [self.wx_range, self.wy_range, self.wz_range]
    }

    pub fn is_degenerate(&self) -> bool {
        self.ranges().iter().all(|[lo, hi]| lo == hi)
    }

    pub fn contains(&self, w: &ScaleTriple) -> bool {
        self.ranges()
            .iter()
            .zip(w.as_array())
            .all(|([lo, hi], v)| *lo <= v && v <= *hi)
    }

    pub fn validate(&self) -> Result<()> {
        for [lo, hi] in self.ranges() {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return Err(Error::InvalidInput(format!("invalid scale range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Per-axis `[min, max]` envelope of the `k` best-ranked scales.
pub fn top_k_interval(ranked: &[ScaleScore], k: usize) -> Result<ScaleInterval> {
    if k == 0 || k > ranked.len() {
        return Err(Error::Validation(format!(
            "k = {k} outside [1, {}]",
            ranked.len()
        )));
    }
    Ok(interval_of(ranked[..k].iter().map(|s| s.scale).collect()))
}

/// Envelope of an explicit scale set.
pub fn interval_of(scales: Vec<ScaleTriple>) -> ScaleInterval {
    let envelope = |f: fn(&ScaleTriple) -> f64| {
        scales.iter().map(f).fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| {
            [lo.min(v), hi.max(v)]
        })
    };
    ScaleInterval {
        wx_range: envelope(|s| s.wx),
        wy_range: envelope(|s| s.wy),
        wz_range: envelope(|s| s.wz),
        source_scales: scales,
    }
}

/// Runs the detector on one frame scaled by `w` and maps the detections
/// back to the original frame.
pub fn scale_and_detect(
    detector: &dyn Detector,
    sequence_id: &str,
    frame: &LoadedFrame,
    w: &ScaleTriple,
    seed: u64,
) -> Result<Vec<Box3D>> {
    w.validate()?;
    let scaled_cloud = if detector.needs_cloud() {
        Some(scale_cloud(&dataio::read_cloud(&frame.cloud_path)?, w)?)
    } else {
        None
    };
    let scaled_truth: Vec<Box3D> = frame.truth.iter().map(|b| scale_box(b, w)).collect();
    let ctx = FrameContext {
        sequence_id,
        frame_id: &frame.frame_id,
        scale: *w,
        cloud: scaled_cloud.as_deref(),
        truth: &scaled_truth,
        seed,
    };
    let dets = detector.detect(&ctx)?;
    Ok(dets.iter().map(|b| rescale_box(b, w)).collect())
}

/// Detector seed of one frame during the sweep.
pub fn sweep_seed(sequence_id: &str, frame_id: &str, scale_index: usize) -> u64 {
    seed::derive(&[
        Part::Str("sweep"),
        Part::Str(sequence_id),
        Part::Str(frame_id),
        Part::Int(scale_index as u64),
    ])
}

/// Rescaled detections of every frame of a sequence at one grid point.
pub fn detect_sequence(
    detector: &dyn Detector,
    seq: &LoadedSequence,
    w: &ScaleTriple,
    scale_index: usize,
) -> Result<Vec<FrameDetections>> {
    seq.frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let seed = sweep_seed(&seq.sequence_id, &f.frame_id, scale_index);
            let boxes = scale_and_detect(detector, &seq.sequence_id, f, w, seed).map_err(|e| Error::Sweep {
                scale: *w,
                sequence: seq.sequence_id.clone(),
                frame: f.frame_id.clone(),
                source: Box::new(e),
            })?;
            Ok(FrameDetections {
                frame_id: f.frame_id.clone(),
                frame_index: i,
                boxes,
            })
        })
        .collect()
}

/// Tracks for every (scale, sequence) pair, indexed `[scale][sequence]`.
pub fn sweep_tracks(
    sequences: &[LoadedSequence],
    detector: &dyn Detector,
    grid: &ScaleGrid,
    tracker: &TrackerConfig,
) -> Result<Vec<Vec<SequenceTracks>>> {
    if sequences.is_empty() {
        return Err(Error::Validation("scale sweep needs at least one sequence".into()));
    }
    tracker.validate()?;
    let items: Vec<(usize, usize)> = (0..grid.scales.len())
        .flat_map(|si| (0..sequences.len()).map(move |qi| (si, qi)))
        .collect();
    let results: Vec<Result<SequenceTracks>> = items
        .par_iter()
        .map(|&(si, qi)| {
            let seq = &sequences[qi];
            let frames = detect_sequence(detector, seq, &grid.scales[si], si)?;
            Ok(SequenceTracks {
                sequence_id: seq.sequence_id.clone(),
                sequence_len: seq.frames.len(),
                tracks: run_tracker(&frames, tracker)?,
            })
        })
        .collect();
    // first error in work-item order, independent of scheduling
    let mut flat = Vec::with_capacity(results.len());
    for r in results {
        flat.push(r?);
    }
    let mut out: Vec<Vec<SequenceTracks>> = Vec::with_capacity(grid.scales.len());
    let mut it = flat.into_iter();
    for _ in 0..grid.scales.len() {
        out.push(it.by_ref().take(sequences.len()).collect());
    }
    Ok(out)
}

/// Sorts ascending by score, ties broken by (wx, wy, wz).
pub fn rank_scores(mut scores: Vec<ScaleScore>) -> Vec<ScaleScore> {
    scores.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.scale.lex_cmp(&b.scale)));
    scores
}

/// Scores precomputed sweep tracks and ranks them.
pub fn rank_tracks(grid: &ScaleGrid, tracks: &[Vec<SequenceTracks>], scoring: &ScoringConfig) -> Result<Vec<ScaleScore>> {
    let scores = grid
        .scales
        .iter()
        .zip(tracks)
        .map(|(w, seqs)| score_scale(*w, seqs, scoring))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_scores(scores))
}

/// Scale-and-detect, track and score every grid point; returns the ranking.
pub fn sweep(
    sequences: &[LoadedSequence],
    detector: &dyn Detector,
    grid: &ScaleGrid,
    tracker: &TrackerConfig,
    scoring: &ScoringConfig,
) -> Result<Vec<ScaleScore>> {
    scoring.validate()?;
    let tracks = sweep_tracks(sequences, detector, grid, tracker)?;
    rank_tracks(grid, &tracks, scoring)
}

/// CSV score table with columns `wx,wy,wz,score,eligible_tracks`, in rank order.
pub fn score_table_csv(ranked: &[ScaleScore]) -> String {
    let mut out = String::from("wx,wy,wz,score,eligible_tracks\n");
    for s in ranked {
        out.push_str(&format!(
            "{:.6},{:.6},{:.6},{:.9},{}\n",
            s.scale.wx,
            s.scale.wy,
            s.scale.wz,
            s.score,
            s.eligible_tracks()
        ));
    }
    out
}
