//! Detection metrics: 3D-IoU average precision with range-band difficulty
//! buckets (KITTI style) and ground-plane centre-distance AP (nuScenes style).
//!
//! Ground truth and detections are given per frame: `gt[f]` and `det[f]`
//! describe the same frame `f`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, Box3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Recall positions 1/40, 2/40, ..., 1.
    Forty,
    /// Legacy recall positions 0, 0.1, ..., 1.
    Eleven,
}

/// A difficulty bucket: ground truth whose centre lies within `max_range`
/// meters of the sensor (ground plane). Buckets are cumulative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBand {
    pub name: String,
    pub max_range: f64,
}

impl RangeBand {
    pub fn new(name: &str, max_range: f64) -> Self {
        Self {
            name: name.to_string(),
            max_range,
        }
    }

    pub fn unbounded() -> Self {
        Self::new("all", f64::INFINITY)
    }

    fn contains(&self, b: &Box3D) -> bool {
        b.range() <= self.max_range
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub bands: Vec<RangeBand>,
    pub interpolation: Interpolation,
    pub distance_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.7,
            bands: vec![
                RangeBand::new("easy", 20.0),
                RangeBand::new("moderate", 35.0),
                RangeBand::new("hard", 50.0),
            ],
            interpolation: Interpolation::Forty,
            distance_thresholds: vec![0.5, 1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketResult {
    pub name: String,
    /// `None` when the bucket holds no ground truth.
    pub ap: Option<f64>,
    pub num_gt: usize,
    pub matched: usize,
    pub missed: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_bucket: Vec<BucketResult>,
    /// Mean AP over present buckets.
    pub average: Option<f64>,
}

impl EvalResult {
    fn from_buckets(per_bucket: Vec<BucketResult>) -> Self {
        let average = avg_ap(&per_bucket.iter().map(|b| b.ap).collect::<Vec<_>>()).ok();
        Self { per_bucket, average }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// 3D IoU AP per range band.
    pub iou: EvalResult,
    /// Centre-distance AP per distance threshold.
    pub center_distance: EvalResult,
}

/// Outcome of one detection after greedy matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

struct Matched {
    /// Outcomes in descending score order.
    outcomes: Vec<Outcome>,
    num_gt: usize,
}

fn check_frames(gt: &[Vec<Box3D>], det: &[Vec<Box3D>]) -> Result<()> {
    if gt.len() != det.len() {
        return Err(Error::Eval(format!(
            "{} ground-truth frames but {} detection frames",
            gt.len(),
            det.len()
        )));
    }
    Ok(())
}

/// Detections pooled across frames, score descending, stable by (frame, index).
fn score_order(det: &[Vec<Box3D>]) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = det
        .iter()
        .enumerate()
        .flat_map(|(f, ds)| (0..ds.len()).map(move |i| (f, i)))
        .collect();
    order.sort_by(|a, b| det[b.0][b.1].score.total_cmp(&det[a.0][a.1].score).then(a.cmp(b)));
    order
}

/// Greedy matching in score order. `pick` returns the best unmatched gt index
/// for a detection among `candidates`, or `None`.
fn greedy_match(
    gt: &[Vec<Box3D>],
    det: &[Vec<Box3D>],
    gt_counts: impl Fn(&Box3D) -> bool,
    det_counts: impl Fn(&Box3D) -> bool,
    pick: impl Fn(&Box3D, &[Box3D], &[bool]) -> Option<usize>,
) -> Matched {
    let mut used: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let num_gt = gt.iter().flatten().filter(|g| gt_counts(g)).count();
    let outcomes = score_order(det)
        .into_iter()
        .map(|(f, i)| {
            let d = &det[f][i];
            match pick(d, &gt[f], &used[f]) {
                Some(g) => {
                    used[f][g] = true;
                    if gt_counts(&gt[f][g]) {
                        Outcome::Tp
                    } else {
                        Outcome::Ignored
                    }
                }
                None if det_counts(d) => Outcome::Fp,
                None => Outcome::Ignored,
            }
        })
        .collect();
    Matched { outcomes, num_gt }
}

/// (recall, precision) after each counted detection.
fn pr_curve(m: &Matched) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve = Vec::new();
    for o in &m.outcomes {
        match o {
            Outcome::Tp => tp += 1,
            Outcome::Fp => fp += 1,
            Outcome::Ignored => continue,
        }
        curve.push((tp as f64 / m.num_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    curve
}

/// Mean over recall positions of the maximum precision at recall >= r.
pub fn interpolated_ap(curve: &[(f64, f64)], interpolation: Interpolation) -> f64 {
    let positions: Vec<f64> = match interpolation {
        Interpolation::Forty => (1..=40).map(|i| i as f64 / 40.0).collect(),
        Interpolation::Eleven => (0..=10).map(|i| i as f64 / 10.0).collect(),
    };
    let n = positions.len() as f64;
    positions
        .iter()
        .map(|&r| {
            curve
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-12)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / n
}

fn bucket_result(name: &str, m: &Matched, ap: f64) -> BucketResult {
    let matched = m.outcomes.iter().filter(|o| **o == Outcome::Tp).count();
    BucketResult {
        name: name.to_string(),
        ap: (m.num_gt > 0).then_some(ap),
        num_gt: m.num_gt,
        matched,
        missed: m.num_gt - matched,
        false_positives: m.outcomes.iter().filter(|o| **o == Outcome::Fp).count(),
    }
}

/// 3D-IoU AP for one range band. Ground truth outside the band is ignored:
/// detections matching it do not count, nor do unmatched detections beyond
/// the band's range.
pub fn ap_iou(
    gt: &[Vec<Box3D>],
    det: &[Vec<Box3D>],
    iou_threshold: f64,
    band: &RangeBand,
    interpolation: Interpolation,
) -> Result<BucketResult> {
    check_frames(gt, det)?;
    let m = greedy_match(
        gt,
        det,
        |g| band.contains(g),
        |d| band.contains(d),
        |d, gts, used| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let iou = iou_3d(d, g);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            best.map(|(j, _)| j)
        },
    );
    let ap = interpolated_ap(&pr_curve(&m), interpolation);
    Ok(bucket_result(&band.name, &m, ap))
}

/// `numpy.interp` with `right` as the value beyond the last sample.
fn np_interp(x: f64, xp: &[f64], fp: &[f64], right: f64) -> f64 {
    let last = xp.len() - 1;
    if x < xp[0] {
        return fp[0];
    }
    if x > xp[last] {
        return right;
    }
    if x == xp[last] {
        return fp[last];
    }
    let j = xp.partition_point(|v| *v <= x) - 1;
    let (x0, x1) = (xp[j], xp[j + 1]);
    if x1 == x0 {
        return fp[j];
    }
    fp[j] + (fp[j + 1] - fp[j]) * (x - x0) / (x1 - x0)
}

const MIN_RECALL: f64 = 0.1;
const MIN_PRECISION: f64 = 0.1;

/// Centre-distance AP: precision sampled at 101 recall points, restricted
/// to recall and precision above 0.1 and renormalized.
pub fn ap_center_distance(gt: &[Vec<Box3D>], det: &[Vec<Box3D>], threshold_m: f64) -> Result<BucketResult> {
    check_frames(gt, det)?;
    let m = greedy_match(
        gt,
        det,
        |_| true,
        |_| true,
        |d, gts, used| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let dist = (d.cx - g.cx).hypot(d.cy - g.cy);
                if dist <= threshold_m && best.is_none_or(|(_, b)| dist < b) {
                    best = Some((j, dist));
                }
            }
            best.map(|(j, _)| j)
        },
    );
    let curve = pr_curve(&m);
    let ap = if m.num_gt == 0 || curve.is_empty() {
        0.0
    } else {
        let rec: Vec<f64> = curve.iter().map(|c| c.0).collect();
        let prec: Vec<f64> = curve.iter().map(|c| c.1).collect();
        let first = (100.0 * MIN_RECALL).round() as usize + 1;
        let vals: Vec<f64> = (first..=100)
            .map(|i| {
                let p = np_interp(i as f64 / 100.0, &rec, &prec, 0.0);
                (p - MIN_PRECISION).max(0.0)
            })
            .collect();
        (vals.iter().sum::<f64>() / vals.len() as f64 / (1.0 - MIN_PRECISION)).clamp(0.0, 1.0)
    };
    Ok(bucket_result(&format!("{threshold_m}m"), &m, ap))
}

/// Mean of the present APs.
pub fn avg_ap(aps: &[Option<f64>]) -> Result<f64> {
    let present: Vec<f64> = aps.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Eval("no bucket has ground truth".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Both metric families. Fails when there is no ground truth at all.
pub fn evaluate(gt: &[Vec<Box3D>], det: &[Vec<Box3D>], config: &EvalConfig) -> Result<EvalReport> {
    check_frames(gt, det)?;
    if gt.iter().all(Vec::is_empty) {
        return Err(Error::Eval("evaluation set has zero ground-truth boxes".into()));
    }
    let iou = config
        .bands
        .iter()
        .map(|b| ap_iou(gt, det, config.iou_threshold, b, config.interpolation))
        .collect::<Result<Vec<_>>>()?;
    let center = config
        .distance_thresholds
        .iter()
        .map(|t| ap_center_distance(gt, det, *t))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        iou: EvalResult::from_buckets(iou),
        center_distance: EvalResult::from_buckets(center),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn car(x: f64, y: f64, score: f64) -> Box3D {
        Box3D::new([x, y, -0.9], [4.0, 2.0, 1.5], 0.0, score).unwrap()
    }

    fn all() -> RangeBand {
        RangeBand::unbounded()
    }

    #[test]
    fn perfect_single_detection() {
        let gt = vec![vec![car(10.0, 0.0, 1.0)]];
        let det = vec![vec![car(10.0, 0.0, 0.9)]];
        let r = ap_iou(&gt, &det, 0.7, &all(), Interpolation::Forty).unwrap();
        assert_eq!(r.ap, Some(1.0));
        assert_eq!((r.matched, r.missed, r.false_positives), (1, 0, 0));
    }

    #[test]
    fn below_threshold_is_zero() {
        let gt = vec![vec![car(10.0, 0.0, 1.0)]];
        // shift by 4/3 along length: IoU = (4 - d)/(4 + d) = 0.5
        let det = vec![vec![car(10.0 + 4.0 / 3.0, 0.0, 0.9)]];
        assert_abs_diff_eq!(iou_3d(&gt[0][0], &det[0][0]), 0.5, epsilon = 1e-12);
        let r = ap_iou(&gt, &det, 0.7, &all(), Interpolation::Forty).unwrap();
        assert_eq!(r.ap, Some(0.0));
    }

    #[test]
    fn hand_computed_pr_curve() {
        // D1 hits G1 (0.9), D2 misses (0.8), D3 hits G2 (0.7)
        let gt = vec![vec![car(10.0, 0.0, 1.0), car(20.0, 5.0, 1.0)]];
        let det = vec![vec![car(10.0, 0.0, 0.9), car(40.0, -5.0, 0.8), car(20.0, 5.0, 0.7)]];
        let ba = all();
        let m = greedy_match(&gt, &det, |g| ba.contains(g), |d| ba.contains(d), |d, gts, used| {
            gts.iter().enumerate().find(|(j, g)| !used[*j] && iou_3d(d, g) >= 0.7).map(|(j, _)| j)
        });
        let curve = pr_curve(&m);
        let want = [(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)];
        for (got, want) in curve.iter().zip(want) {
            assert_abs_diff_eq!(got.0, want.0, epsilon = 1e-12);
            assert_abs_diff_eq!(got.1, want.1, epsilon = 1e-12);
        }
        // 20 positions at precision 1, 20 at 2/3
        let expected = (20.0 * 1.0 + 20.0 * (2.0 / 3.0)) / 40.0;
        let r = ap_iou(&gt, &det, 0.7, &all(), Interpolation::Forty).unwrap();
        assert_abs_diff_eq!(r.ap.unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.8333, epsilon = 1e-4);
    }

    #[test]
    fn eleven_point_variant() {
        let gt = vec![vec![car(10.0, 0.0, 1.0), car(20.0, 5.0, 1.0)]];
        let det = vec![vec![car(10.0, 0.0, 0.9), car(40.0, -5.0, 0.8), car(20.0, 5.0, 0.7)]];
        let r = ap_iou(&gt, &det, 0.7, &all(), Interpolation::Eleven).unwrap();
        // positions 0..0.5 (6) at 1, 0.6..1.0 (5) at 2/3
        assert_abs_diff_eq!(r.ap.unwrap(), (6.0 + 5.0 * 2.0 / 3.0) / 11.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_bucket_is_absent() {
        let gt = vec![vec![car(40.0, 0.0, 1.0)]];
        let det = vec![vec![car(40.0, 0.0, 0.9)]];
        let easy = RangeBand::new("easy", 20.0);
        let r = ap_iou(&gt, &det, 0.7, &easy, Interpolation::Forty).unwrap();
        assert_eq!(r.ap, None);
        assert_eq!(r.false_positives, 0);
        assert!(ap_center_distance(&[vec![]], &[vec![car(1.0, 1.0, 0.5)]], 1.0).unwrap().ap.is_none());
    }

    #[test]
    fn out_of_band_match_ignored() {
        let gt = vec![vec![car(10.0, 0.0, 1.0), car(30.0, 0.0, 1.0)]];
        let det = vec![vec![car(30.0, 0.0, 0.95), car(10.0, 0.0, 0.9)]];
        let r = ap_iou(&gt, &det, 0.7, &RangeBand::new("easy", 20.0), Interpolation::Forty).unwrap();
        assert_eq!(r.ap, Some(1.0));
        assert_eq!(r.num_gt, 1);
    }

    #[test]
    fn center_distance_thresholds() {
        let gt = vec![vec![car(10.0, 0.0, 1.0)]];
        let near = vec![vec![car(10.3, 0.0, 0.9)]];
        for t in [0.5, 1.0, 2.0, 4.0] {
            assert_eq!(ap_center_distance(&gt, &near, t).unwrap().matched, 1);
            assert_eq!(ap_center_distance(&gt, &gt, t).unwrap().ap, Some(1.0));
        }
        let far = vec![vec![car(13.0, 0.0, 0.9)]];
        for (t, hit) in [(0.5, 0), (1.0, 0), (2.0, 0), (4.0, 1)] {
            assert_eq!(ap_center_distance(&gt, &far, t).unwrap().matched, hit);
        }
    }

    #[test]
    fn center_distance_partial_recall() {
        // half recall at precision 1: samples at recall 0.11..0.5 hold 1, beyond 0.5 drop to 0
        let gt = vec![vec![car(10.0, 0.0, 1.0), car(20.0, 5.0, 1.0)]];
        let det = vec![vec![car(10.0, 0.0, 0.9)]];
        let r = ap_center_distance(&gt, &det, 1.0).unwrap();
        let expected = 40.0 * 0.9 / 90.0 / 0.9;
        assert_abs_diff_eq!(r.ap.unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn avg_ap_cases() {
        assert_abs_diff_eq!(avg_ap(&[Some(0.688), Some(0.498), Some(0.450)]).unwrap(), 0.545, epsilon = 5e-4);
        assert_eq!(avg_ap(&[Some(0.3)]).unwrap(), 0.3);
        assert_eq!(avg_ap(&[Some(1.0); 4]).unwrap(), 1.0);
        assert_eq!(avg_ap(&[Some(0.2), None]).unwrap(), 0.2);
        assert!(avg_ap(&[None, None]).is_err());
    }

    #[test]
    fn evaluate_rejects_empty_gt() {
        assert!(evaluate(&[vec![]], &[vec![car(1.0, 0.0, 0.5)]], &EvalConfig::default()).is_err());
        assert!(evaluate(&[vec![]], &[], &EvalConfig::default()).is_err());
    }
}
