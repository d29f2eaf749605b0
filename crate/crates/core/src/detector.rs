//! Detector interface, the parametric surrogate detector and the subprocess
//! adapter for external detectors.

use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{self, ClassSet, FrameDetections};
use crate::error::{Error, Result};
use crate::geometry::{self, Box3D, Point3, ScaleTriple};
use crate::seed::{self, Part};

/// Everything a detector may look at for one frame. Both `cloud` and `truth`
/// are already in the scaled coordinate frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext<'a> {
    pub sequence_id: &'a str,
    pub frame_id: &'a str,
    pub scale: ScaleTriple,
    /// Present only when the detector reports [`Detector::needs_cloud`].
    pub cloud: Option<&'a [Point3]>,
    /// Scene boxes consumed by the surrogate.
    pub truth: &'a [Box3D],
    pub seed: u64,
}

/// A frozen detector. Implementations must be reentrant: `detect` may be
/// called concurrently for different frames.
pub trait Detector: Send + Sync {
    fn name(&self) -> &str;

    fn needs_cloud(&self) -> bool;

    fn detect(&self, ctx: &FrameContext<'_>) -> Result<Vec<Box3D>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogatePrior {
    /// Expected object size (length, width, height) in meters.
    pub mean_dims: [f64; 3],
    pub sigma0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub fp_rate: f64,
    pub p_min: f64,
    pub rng_seed: u64,
}

impl Default for SurrogatePrior {
    fn default() -> Self {
        Self {
            mean_dims: [4.2, 1.8, 1.5],
            sigma0: 0.05,
            alpha: 1.5,
            beta: 5.0,
            gamma: 3.0,
            fp_rate: 0.2,
            p_min: 0.05,
            rng_seed: 0,
        }
    }
}

/// Ground-plane extent of false-positive placement, meters.
const FP_EXTENT: f64 = 50.0;
const FP_MAX_SCORE: f64 = 0.3;
const MIN_DIM: f64 = 0.1;
const SCORE_JITTER: f64 = 0.02;

impl SurrogatePrior {
    pub fn with_mean_dims(mut self, dims: [f64; 3]) -> Self {
        self.mean_dims = dims;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = self.mean_dims.iter().all(|v| v.is_finite())
            && [self.sigma0, self.alpha, self.beta, self.gamma, self.fp_rate, self.p_min]
                .iter()
                .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidInput("surrogate prior has non-finite fields".into()));
        }
        if self.mean_dims.iter().any(|d| *d <= 0.0) {
            return Err(Error::InvalidInput("surrogate mean_dims must be positive".into()));
        }
        if self.sigma0 < 0.0 || self.fp_rate < 0.0 || !(0.0..=1.0).contains(&self.p_min) {
            return Err(Error::InvalidInput(
                "surrogate prior requires sigma0 >= 0, fp_rate >= 0, p_min in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Relative size mismatch `|d - mean_dims| / |mean_dims|`.
    pub fn mismatch(&self, dims: [f64; 3]) -> f64 {
        let diff: f64 = dims
            .iter()
            .zip(self.mean_dims)
            .map(|(d, m)| (d - m).powi(2))
            .sum();
        let norm: f64 = self.mean_dims.iter().map(|m| m * m).sum();
        (diff / norm).sqrt()
    }

    pub fn detection_probability(&self, mismatch: f64) -> f64 {
        (1.0 - self.alpha * mismatch).clamp(self.p_min, 1.0)
    }

    pub fn noise_std(&self, mismatch: f64) -> f64 {
        self.sigma0 * (1.0 + self.beta * mismatch)
    }

    /// Score before jitter.
    pub fn base_score(&self, mismatch: f64) -> f64 {
        (-self.gamma * mismatch).exp()
    }
}

/// Simulates one frame of detections for the given (scaled) scene boxes.
pub fn surrogate_detect(prior: &SurrogatePrior, scene_truth: &[Box3D], frame_seed: u64) -> Vec<Box3D> {
    let mut rng = seed::rng(seed::derive(&[Part::Int(prior.rng_seed), Part::Int(frame_seed)]));
    let mut out = Vec::with_capacity(scene_truth.len() + 2);
    for t in scene_truth {
        let m = prior.mismatch(t.dims());
        let emit: f64 = rng.random();
        if emit >= prior.detection_probability(m) {
            continue;
        }
        let std = prior.noise_std(m);
        let mut noise = || -> f64 { std * rng.sample::<f64, _>(StandardNormal) };
        let center = [t.cx + noise(), t.cy + noise(), t.cz + noise()];
        let dims = [
            (t.length + noise()).max(MIN_DIM),
            (t.width + noise()).max(MIN_DIM),
            (t.height + noise()).max(MIN_DIM),
        ];
        let jitter = rng.random_range(-SCORE_JITTER..=SCORE_JITTER);
        let score = (prior.base_score(m) + jitter).clamp(0.0, 1.0);
        out.push(Box3D {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            length: dims[0],
            width: dims[1],
            height: dims[2],
            yaw: t.yaw,
            score,
        });
    }
    let n_fp = if prior.fp_rate > 0.0 {
        Poisson::new(prior.fp_rate)
            .expect("positive Poisson rate")
            .sample(&mut rng) as usize
    } else {
        0
    };
    for _ in 0..n_fp {
        let cx = rng.random_range(0.0..FP_EXTENT);
        let cy = rng.random_range(-FP_EXTENT / 2.0..FP_EXTENT / 2.0);
        let cz = rng.random_range(-1.5..0.0);
        let dims = prior.mean_dims.map(|d| d * rng.random_range(0.9..1.1));
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let score = rng.random_range(0.0..FP_MAX_SCORE);
        out.push(Box3D {
            cx,
            cy,
            cz,
            length: dims[0],
            width: dims[1],
            height: dims[2],
            yaw,
            score,
        });
    }
    out
}

/// Re-estimates `mean_dims` as the componentwise mean of pseudo-label
/// dimensions. Every other parameter is kept.
pub fn adapt_prior<'a>(
    prior: &SurrogatePrior,
    pseudo_labels: impl IntoIterator<Item = &'a Box3D>,
) -> Result<SurrogatePrior> {
    let mut sum = [0f64; 3];
    let mut n = 0usize;
    for b in pseudo_labels {
        for (s, d) in sum.iter_mut().zip(b.dims()) {
            *s += d;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Adaptation("no pseudo-label boxes to adapt from".into()));
    }
    Ok(prior.with_mean_dims(sum.map(|s| s / n as f64)))
}

/// Convenience wrapper over [`adapt_prior`] for per-frame detections.
pub fn adapt_prior_frames(prior: &SurrogatePrior, frames: &[FrameDetections]) -> Result<SurrogatePrior> {
    adapt_prior(prior, frames.iter().flat_map(|f| f.boxes.iter()))
}

#[derive(Debug, Clone)]
pub struct SurrogateDetector {
    pub prior: SurrogatePrior,
}

impl SurrogateDetector {
    pub fn new(prior: SurrogatePrior) -> Result<Self> {
        prior.validate()?;
        Ok(Self { prior })
    }
}

impl Detector for SurrogateDetector {
    fn name(&self) -> &str {
        "surrogate"
    }

    fn needs_cloud(&self) -> bool {
        false
    }

    fn detect(&self, ctx: &FrameContext<'_>) -> Result<Vec<Box3D>> {
        Ok(surrogate_detect(&self.prior, ctx.truth, ctx.seed))
    }
}

/// Runs an external program per frame. The scaled cloud is written to a
/// temporary file; the program must write a label file to the output path.
///
/// `{cloud}` and `{output}` in `args` are substituted. Without a `{cloud}`
/// placeholder the cloud path is appended as the last argument; the output
/// path is always also exported as `SCALEADAPT_OUTPUT`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSpec {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    /// Horizontal field of view applied to the cloud before detection.
    #[serde(default)]
    pub fov_deg: Option<f64>,
    #[serde(default)]
    pub classes: ClassSet,
    #[serde(default)]
    pub work_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ExternalDetector {
    spec: ExternalSpec,
    work_dir: PathBuf,
    counter: AtomicU64,
}

impl ExternalDetector {
    pub fn new(spec: ExternalSpec) -> Result<Self> {
        let work_dir = spec
            .work_dir
            .clone()
            .unwrap_or_else(|| std::env::temp_dir().join(format!("scaleadapt-{}", std::process::id())));
        std::fs::create_dir_all(&work_dir).map_err(|e| Error::io(&work_dir, e))?;
        Ok(Self {
            spec,
            work_dir,
            counter: AtomicU64::new(0),
        })
    }
}

impl Detector for ExternalDetector {
    fn name(&self) -> &str {
        &self.spec.command
    }

    fn needs_cloud(&self) -> bool {
        true
    }

    fn detect(&self, ctx: &FrameContext<'_>) -> Result<Vec<Box3D>> {
        let cloud = ctx
            .cloud
            .ok_or_else(|| Error::Detector("external detector requires a point cloud".into()))?;
        let filtered;
        let cloud = match self.spec.fov_deg {
            Some(fov) => {
                filtered = geometry::fov_filter(cloud, fov);
                filtered.as_slice()
            }
            None => cloud,
        };
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let stem = format!("{:016x}_{n}", ctx.seed);
        let cloud_path = self.work_dir.join(format!("{stem}.bin"));
        let out_path = self.work_dir.join(format!("{stem}.txt"));
        dataio::write_cloud(&cloud_path, cloud)?;

        let cloud_str = cloud_path.to_string_lossy().into_owned();
        let out_str = out_path.to_string_lossy().into_owned();
        let mut has_cloud_arg = false;
        let args: Vec<String> = self
            .spec
            .args
            .iter()
            .map(|a| {
                has_cloud_arg |= a.contains("{cloud}");
                a.replace("{cloud}", &cloud_str).replace("{output}", &out_str)
            })
            .collect();
        let mut cmd = Command::new(&self.spec.command);
        cmd.args(&args).env("SCALEADAPT_OUTPUT", &out_path);
        if !has_cloud_arg {
            cmd.arg(&cloud_path);
        }
        let result = cmd.output();
        let _ = std::fs::remove_file(&cloud_path);
        let output = result.map_err(|e| Error::Detector(format!("cannot spawn '{}': {e}", self.spec.command)))?;
        if !output.status.success() {
            let _ = std::fs::remove_file(&out_path);
            return Err(Error::Detector(format!(
                "'{}' exited with {} on frame {}/{}: {}",
                self.spec.command,
                output.status,
                ctx.sequence_id,
                ctx.frame_id,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let boxes = dataio::read_labels_with_classes(&out_path, &self.spec.classes);
        let _ = std::fs::remove_file(&out_path);
        boxes.map_err(|e| Error::Detector(format!("bad detector output: {e}")))
    }
}

/// Serializable detector selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    Surrogate(SurrogatePrior),
    External(ExternalSpec),
}

impl DetectorSpec {
    pub fn build(&self) -> Result<Box<dyn Detector>> {
        Ok(match self {
            DetectorSpec::Surrogate(p) => Box::new(SurrogateDetector::new(*p)?),
            DetectorSpec::External(s) => Box::new(ExternalDetector::new(s.clone())?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn car(x: f64, dims: [f64; 3]) -> Box3D {
        Box3D::new([x, 0.0, -0.9], dims, 0.2, 1.0).unwrap()
    }

    #[test]
    fn zero_mismatch_closed_form() {
        let p = SurrogatePrior::default();
        let m = p.mismatch(p.mean_dims);
        assert_eq!(m, 0.0);
        assert_eq!(p.detection_probability(m), 1.0);
        assert_eq!(p.noise_std(m), p.sigma0);
        assert_eq!(p.base_score(m), 1.0);
    }

    #[test]
    fn zero_mismatch_scores_near_one() {
        let p = SurrogatePrior {
            fp_rate: 0.0,
            ..Default::default()
        };
        for s in 0..50 {
            let det = surrogate_detect(&p, &[car(10.0, p.mean_dims)], s);
            assert_eq!(det.len(), 1);
            assert!(det[0].score >= 0.98);
        }
    }

    #[test]
    fn degenerate_parameters_detect_everything() {
        let p = SurrogatePrior {
            fp_rate: 0.0,
            p_min: 1.0,
            ..Default::default()
        };
        let truth: Vec<_> = (0..5).map(|i| car(10.0 * i as f64, [3.0, 1.5, 1.2])).collect();
        for s in 0..100 {
            assert_eq!(surrogate_detect(&p, &truth, s).len(), truth.len());
        }
    }

    #[test]
    fn deterministic_for_fixed_seeds() {
        let p = SurrogatePrior::default();
        let truth = [car(10.0, [4.5, 1.9, 1.6]), car(20.0, [3.9, 1.7, 1.4])];
        assert_eq!(surrogate_detect(&p, &truth, 7), surrogate_detect(&p, &truth, 7));
        assert!(surrogate_detect(&p, &[], 7).iter().all(|b| b.score < FP_MAX_SCORE));
    }

    #[test]
    fn monotone_in_mismatch() {
        let p = SurrogatePrior::default();
        let ms: Vec<f64> = (0..50).map(|i| i as f64 * 0.02).collect();
        for w in ms.windows(2) {
            assert!(p.detection_probability(w[1]) <= p.detection_probability(w[0]));
            assert!(p.base_score(w[1]) <= p.base_score(w[0]));
            assert!(p.noise_std(w[1]) >= p.noise_std(w[0]));
        }
    }

    #[test]
    fn adapt_prior_means() {
        let p = SurrogatePrior::default();
        let a = car(0.0, [4.0, 2.0, 1.5]);
        let b = car(9.0, [6.0, 2.0, 1.5]);
        let adapted = adapt_prior(&p, &[a, a]).unwrap();
        assert_eq!(adapted.mean_dims, [4.0, 2.0, 1.5]);
        let adapted = adapt_prior(&p, &[a, b]).unwrap();
        assert_abs_diff_eq!(adapted.mean_dims[0], 5.0, epsilon = 1e-12);
        assert_eq!(
            SurrogatePrior {
                mean_dims: p.mean_dims,
                ..adapted
            },
            p
        );
        assert!(matches!(adapt_prior(&p, &[]), Err(Error::Adaptation(_))));
    }
}
