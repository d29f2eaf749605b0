//! Temporal-coherency scores of a scale hypothesis. All metrics rank
//! lower-is-better.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScaleTriple;
use crate::tracking::Track;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean volume variation with the no-eligible-track penalty.
    MvvStar,
    /// Bare mean volume variation; sequences without eligible tracks score 0
    /// and are thus indistinguishable from perfectly stable ones.
    Mvv,
    /// Time extension: 1 - mean track length / sequence length.
    Tex,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::MvvStar, Metric::Mvv, Metric::Tex];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::MvvStar => "mvv_star",
            Metric::Mvv => "mvv",
            Metric::Tex => "tex",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mvv_star" | "mvv*" => Ok(Metric::MvvStar),
            "mvv" => Ok(Metric::Mvv),
            "tex" => Ok(Metric::Tex),
            _ => Err(Error::InvalidInput(format!("unknown metric '{s}'"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub min_track_len: usize,
    /// Penalty in m³ for sequences without an eligible track.
    pub h_star: f64,
    pub metric: Metric,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            min_track_len: 5,
            h_star: 5.0,
            metric: Metric::MvvStar,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_track_len < 2 {
            return Err(Error::InvalidInput("min_track_len must be >= 2".into()));
        }
        if !(self.h_star.is_finite() && self.h_star > 0.0) {
            return Err(Error::InvalidInput("h_star must be positive".into()));
        }
        Ok(())
    }
}

/// Sample standard deviation (denominator n - 1). `None` for n < 2.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Some((ss / (n as f64 - 1.0)).sqrt())
}

fn eligible<'a>(tracks: &'a [Track], config: &ScoringConfig) -> impl Iterator<Item = &'a Track> {
    let min_len = config.min_track_len.max(2);
    tracks.iter().filter(move |t| t.len() >= min_len)
}

pub fn eligible_count(tracks: &[Track], config: &ScoringConfig) -> usize {
    eligible(tracks, config).count()
}

/// Mean over eligible tracks of the sample std of box volumes, or `None`
/// when no track is eligible.
pub fn mvv(tracks: &[Track], config: &ScoringConfig) -> Option<f64> {
    let stds: Vec<f64> = eligible(tracks, config)
        .map(|t| {
            let v: Vec<f64> = t.volumes().collect();
            sample_std(&v).expect("eligible tracks have >= 2 boxes")
        })
        .collect();
    if stds.is_empty() {
        None
    } else {
        Some(stds.iter().sum::<f64>() / stds.len() as f64)
    }
}

/// MVV of one sequence; without eligible tracks this falls back to the
/// penalty path of [`mvv_star_sequence`].
pub fn mvv_sequence(tracks: &[Track], config: &ScoringConfig) -> f64 {
    mvv(tracks, config).unwrap_or(config.h_star)
}

/// MVV when at least one eligible track exists, otherwise `h_star`.
pub fn mvv_star_sequence(tracks: &[Track], config: &ScoringConfig) -> f64 {
    mvv(tracks, config).unwrap_or(config.h_star)
}

/// `1 - mean(track length) / sequence_len`; 1 without tracks.
pub fn tex_sequence(tracks: &[Track], sequence_len: usize) -> Result<f64> {
    if sequence_len == 0 {
        return Err(Error::InvalidInput("sequence_len must be >= 1".into()));
    }
    if tracks.is_empty() {
        return Ok(1.0);
    }
    let mean_len = tracks.iter().map(|t| t.len() as f64).sum::<f64>() / tracks.len() as f64;
    Ok(1.0 - mean_len / sequence_len as f64)
}

/// Tracks of one sequence under one scale hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTracks {
    pub sequence_id: String,
    pub sequence_len: usize,
    pub tracks: Vec<Track>,
}

/// Applies the configured metric to one sequence.
pub fn sequence_score(seq: &SequenceTracks, config: &ScoringConfig) -> Result<f64> {
    match config.metric {
        Metric::MvvStar => Ok(mvv_star_sequence(&seq.tracks, config)),
        Metric::Mvv => Ok(mvv(&seq.tracks, config).unwrap_or(0.0)),
        Metric::Tex => tex_sequence(&seq.tracks, seq.sequence_len),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub sequence_id: String,
    pub score: f64,
    pub eligible_tracks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleScore {
    pub scale: ScaleTriple,
    /// Arithmetic mean of the per-sequence scores.
    pub score: f64,
    pub per_sequence: Vec<SequenceScore>,
}

impl ScaleScore {
    pub fn eligible_tracks(&self) -> usize {
        self.per_sequence.iter().map(|s| s.eligible_tracks).sum()
    }
}

/// Scores one scale hypothesis as the mean sequence score.
pub fn score_scale(scale: ScaleTriple, sequences: &[SequenceTracks], config: &ScoringConfig) -> Result<ScaleScore> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(Error::Validation("cannot score a scale over zero sequences".into()));
    }
    let per_sequence = sequences
        .iter()
        .map(|s| {
            Ok(SequenceScore {
                sequence_id: s.sequence_id.clone(),
                score: sequence_score(s, config)?,
                eligible_tracks: eligible_count(&s.tracks, config),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let score = mean(per_sequence.iter().map(|s| s.score));
    Ok(ScaleScore {
        scale,
        score,
        per_sequence,
    })
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}
