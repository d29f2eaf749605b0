//! Synthetic driving scenes: constant-velocity cars with surface-sampled
//! LiDAR-like clouds, written in the on-disk dataset formats.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{self, FrameEntry, SequenceManifest};
use crate::error::{Error, Result};
use crate::geometry::{in_fov, scale_box, Box3D, Point3, ScaleTriple};
use crate::seed::{self, Part};

/// Source-domain mean car size (length, width, height).
pub const SOURCE_SIZE: [f64; 3] = [4.2, 1.8, 1.5];
/// Target-domain mean car size used by the "target-like" preset.
pub const TARGET_SIZE: [f64; 3] = [4.86, 2.05, 1.67];

const MAX_SPAWN_ATTEMPTS: usize = 500;
/// Range at which `points_per_m2` applies.
const REFERENCE_RANGE: f64 = 10.0;
const MIN_GROUND_RANGE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_sequences: usize,
    pub frames_per_sequence: usize,
    /// Inclusive range of cars per sequence.
    pub cars_per_sequence: [usize; 2],
    pub size_mean: [f64; 3],
    /// Per-dimension standard deviation of car sizes, meters.
    pub size_std: f64,
    /// Speed range in meters per frame.
    pub speed_range: [f64; 2],
    /// Trajectory midpoints are drawn from this x range ...
    pub spawn_x: [f64; 2],
    /// ... and this y range.
    pub spawn_y: [f64; 2],
    /// Minimum centre distance between any two cars at any frame.
    pub min_separation: f64,
    pub ground_z: f64,
    /// Surface sampling density at 10 m; falls off as 1/range².
    pub points_per_m2: f64,
    pub ground_points: usize,
    pub fov_deg: f64,
    pub max_range: f64,
    pub frame_rate_hz: f64,
    pub rng_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_sequences: 5,
            frames_per_sequence: 40,
            cars_per_sequence: [6, 10],
            size_mean: SOURCE_SIZE,
            size_std: 0.05,
            speed_range: [0.0, 0.5],
            spawn_x: [8.0, 45.0],
            spawn_y: [-15.0, 15.0],
            min_separation: 6.0,
            ground_z: -1.7,
            points_per_m2: 50.0,
            ground_points: 400,
            fov_deg: 90.0,
            max_range: 50.0,
            frame_rate_hz: 10.0,
            rng_seed: 0,
        }
    }
}

impl WorldConfig {
    /// Named presets: `source-like` and `target-like`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "source-like" => Ok(Self::default()),
            "target-like" => Ok(Self {
                size_mean: TARGET_SIZE,
                ..Self::default()
            }),
            _ => Err(Error::InvalidInput(format!(
                "unknown preset '{name}' (expected source-like or target-like)"
            ))),
        }
    }

    /// A world whose mean car size equals `source_size / ratio`, so that the
    /// source-to-target scale is exactly `ratio`.
    pub fn with_source_ratio(source_size: [f64; 3], ratio: ScaleTriple) -> Self {
        let r = ratio.as_array();
        Self {
            size_mean: [source_size[0] / r[0], source_size[1] / r[1], source_size[2] / r[2]],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("world config: {m}")));
        if self.n_sequences < 1 || self.frames_per_sequence < 1 || self.cars_per_sequence[0] < 1 {
            return bad("counts must be >= 1");
        }
        if self.cars_per_sequence[0] > self.cars_per_sequence[1] {
            return bad("cars_per_sequence must be [min, max]");
        }
        if self.size_mean.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("size_mean must be positive");
        }
        if !(self.points_per_m2.is_finite() && self.points_per_m2 > 0.0) {
            return bad("points_per_m2 must be positive");
        }
        if self.size_std < 0.0 || self.speed_range[0] < 0.0 || self.speed_range[0] > self.speed_range[1] {
            return bad("size_std and speed_range must be non-negative and ordered");
        }
        if self.spawn_x[0] > self.spawn_x[1] || self.spawn_y[0] > self.spawn_y[1] {
            return bad("spawn ranges must be ordered");
        }
        if !(self.frame_rate_hz > 0.0 && self.max_range > 0.0 && self.fov_deg > 0.0) {
            return bad("frame_rate_hz, max_range and fov_deg must be positive");
        }
        Ok(())
    }
}

/// One simulated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub frame_id: String,
    /// Visible ground-truth boxes.
    pub truth: Vec<Box3D>,
    /// Index into the sequence's car list for each truth box.
    pub car_ids: Vec<usize>,
    pub cloud: Vec<Point3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSequence {
    pub sequence_id: String,
    pub frames: Vec<SimFrame>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Car {
    start: [f64; 2],
    velocity: [f64; 2],
    dims: [f64; 3],
    yaw: f64,
}

impl Car {
    fn center_at(&self, t: usize) -> [f64; 2] {
        [
            self.start[0] + self.velocity[0] * t as f64,
            self.start[1] + self.velocity[1] * t as f64,
        ]
    }
}

fn spawn_cars(config: &WorldConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Car>> {
    let [lo, hi] = config.cars_per_sequence;
    let n = rng.random_range(lo..=hi);
    let size_noise = Normal::new(0.0, config.size_std).expect("non-negative std");
    let frames = config.frames_per_sequence;
    let mut cars: Vec<Car> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..MAX_SPAWN_ATTEMPTS {
            let mid = [
                sample_range(rng, config.spawn_x),
                sample_range(rng, config.spawn_y),
            ];
            let yaw = rng.random_range(-PI..PI);
            let speed = sample_range(rng, config.speed_range);
            let velocity = [speed * yaw.cos(), speed * yaw.sin()];
            let half = (frames as f64 - 1.0) / 2.0;
            let start = [mid[0] - velocity[0] * half, mid[1] - velocity[1] * half];
            let dims = config
                .size_mean
                .map(|m| (m + size_noise.sample(rng)).max(0.1 * m));
            let car = Car {
                start,
                velocity,
                dims,
                yaw,
            };
            let clear = cars.iter().all(|other| {
                (0..frames).all(|t| {
                    let a = car.center_at(t);
                    let b = other.center_at(t);
                    (a[0] - b[0]).hypot(a[1] - b[1]) >= config.min_separation
                })
            });
            if clear {
                cars.push(car);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidInput(format!(
                "spawn region too small: could not place car {} of {n} with separation {} m",
                cars.len() + 1,
                config.min_separation
            )));
        }
    }
    Ok(cars)
}

fn sample_range(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// A box face: centre, outward normal and the two in-plane half-extent vectors.
struct Face {
    center: [f64; 3],
    normal: [f64; 3],
    u: [f64; 3],
    v: [f64; 3],
}

fn faces(b: &Box3D) -> [Face; 6] {
    let (s, c) = b.yaw.sin_cos();
    let ax = [c, s, 0.0];
    let ay = [-s, c, 0.0];
    let az = [0.0, 0.0, 1.0];
    let half = [b.length / 2.0, b.width / 2.0, b.height / 2.0];
    let axes = [ax, ay, az];
    let scaled = |a: [f64; 3], k: f64| [a[0] * k, a[1] * k, a[2] * k];
    let mut out = Vec::with_capacity(6);
    for (i, (other1, other2)) in [(1, 2), (0, 2), (0, 1)].into_iter().enumerate() {
        for sign in [1.0, -1.0] {
            let n = scaled(axes[i], sign);
            let off = scaled(axes[i], sign * half[i]);
            out.push(Face {
                center: [b.cx + off[0], b.cy + off[1], b.cz + off[2]],
                normal: n,
                u: scaled(axes[other1], half[other1]),
                v: scaled(axes[other2], half[other2]),
            });
        }
    }
    out.try_into().ok().expect("six faces")
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Points sampled uniformly on the faces visible from the sensor origin,
/// Poisson-distributed in count with mean `density × area`, where the density
/// is `points_per_m2 · (10 / range)²`.
pub fn sample_box_surface(b: &Box3D, points_per_m2: f64, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    let range = b.range().max(1.0);
    let density = points_per_m2 * (REFERENCE_RANGE / range).powi(2);
    let mut pts = Vec::new();
    for f in faces(b) {
        let to_sensor = [-f.center[0], -f.center[1], -f.center[2]];
        let facing = f.normal[0] * to_sensor[0] + f.normal[1] * to_sensor[1] + f.normal[2] * to_sensor[2];
        if facing <= 0.0 {
            continue;
        }
        let area = 4.0 * norm(f.u) * norm(f.v);
        let mean = density * area;
        if mean <= 0.0 {
            continue;
        }
        let count = Poisson::new(mean).expect("positive rate").sample(rng) as usize;
        for _ in 0..count {
            let a: f64 = rng.random_range(-1.0..=1.0);
            let c: f64 = rng.random_range(-1.0..=1.0);
            let intensity: f64 = rng.random_range(0.2..0.8);
            pts.push(Point3::new(
                f.center[0] + a * f.u[0] + c * f.v[0],
                f.center[1] + a * f.u[1] + c * f.v[1],
                f.center[2] + a * f.u[2] + c * f.v[2],
                intensity,
            ));
        }
    }
    pts
}

fn ground_cloud(config: &WorldConfig, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    let half_fov = config.fov_deg.min(360.0).to_radians() / 2.0;
    let r0 = MIN_GROUND_RANGE.powi(2);
    let r1 = config.max_range.powi(2);
    (0..config.ground_points)
        .map(|_| {
            let r = rng.random_range(r0..r1).sqrt();
            let theta = rng.random_range(-half_fov..=half_fov);
            Point3::new(r * theta.cos(), r * theta.sin(), config.ground_z, rng.random_range(0.0..0.2))
        })
        .collect()
}

fn simulate_sequence(config: &WorldConfig, index: usize) -> Result<SimSequence> {
    let sequence_id = format!("seq_{index:03}");
    let mut rng = seed::rng(seed::derive(&[
        Part::Str("sim"),
        Part::Int(config.rng_seed),
        Part::Int(index as u64),
    ]));
    let cars = spawn_cars(config, &mut rng)?;
    let mut frames = Vec::with_capacity(config.frames_per_sequence);
    for t in 0..config.frames_per_sequence {
        let mut truth = Vec::new();
        let mut car_ids = Vec::new();
        let mut cloud = Vec::new();
        for (id, car) in cars.iter().enumerate() {
            let [x, y] = car.center_at(t);
            let b = Box3D::new([x, y, config.ground_z + car.dims[2] / 2.0], car.dims, car.yaw, 1.0)?;
            if !in_fov(x, y, config.fov_deg) || b.range() > config.max_range {
                continue;
            }
            cloud.extend(
                sample_box_surface(&b, config.points_per_m2, &mut rng)
                    .into_iter()
                    .filter(|p| in_fov(p.x, p.y, config.fov_deg)),
            );
            truth.push(b);
            car_ids.push(id);
        }
        cloud.extend(ground_cloud(config, &mut rng));
        frames.push(SimFrame {
            frame_id: format!("{t:06}"),
            truth,
            car_ids,
            cloud,
        });
    }
    Ok(SimSequence { sequence_id, frames })
}

/// Simulates every sequence in memory. Deterministic per `rng_seed`.
pub fn simulate(config: &WorldConfig) -> Result<Vec<SimSequence>> {
    config.validate()?;
    (0..config.n_sequences)
        .into_par_iter()
        .map(|i| simulate_sequence(config, i))
        .collect()
}

/// Writes clouds under `clouds/`, ground-truth labels under `labels/` and
/// `manifest.toml`. Returns the manifests (with absolute paths).
pub fn write_world(sequences: &[SimSequence], frame_rate_hz: f64, out_dir: &Path) -> Result<Vec<SequenceManifest>> {
    let mut manifests = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let cloud_dir = out_dir.join("clouds").join(&seq.sequence_id);
        let label_dir = out_dir.join("labels").join(&seq.sequence_id);
        for d in [&cloud_dir, &label_dir] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let mut frames = Vec::with_capacity(seq.frames.len());
        for (t, f) in seq.frames.iter().enumerate() {
            let cloud_path: PathBuf = cloud_dir.join(format!("{}.bin", f.frame_id));
            let label_path: PathBuf = label_dir.join(format!("{}.txt", f.frame_id));
            dataio::write_cloud(&cloud_path, &f.cloud)?;
            dataio::write_labels(&label_path, &f.truth)?;
            frames.push(FrameEntry {
                frame_id: f.frame_id.clone(),
                cloud_path,
                label_path: Some(label_path),
                timestamp: Some(t as f64 / frame_rate_hz),
            });
        }
        manifests.push(SequenceManifest {
            sequence_id: seq.sequence_id.clone(),
            frames,
            frame_rate_hz,
        });
    }
    dataio::write_manifest(out_dir.join("manifest.toml"), &manifests)?;
    Ok(manifests)
}

/// Simulates and writes a dataset; returns manifests and the hidden ground truth.
pub fn generate(config: &WorldConfig, out_dir: &Path) -> Result<(Vec<SequenceManifest>, Vec<SimSequence>)> {
    let sequences = simulate(config)?;
    let manifests = write_world(&sequences, config.frame_rate_hz, out_dir)?;
    Ok((manifests, sequences))
}

/// Ground truth as seen in a cloud scaled by `w`.
pub fn scaled_truth(gt: &[Box3D], w: &ScaleTriple) -> Vec<Box3D> {
    gt.iter().map(|b| scale_box(b, w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rescale_box;

    fn distance_to_surface(b: &Box3D, p: &Point3) -> f64 {
        let (s, c) = b.yaw.sin_cos();
        let dx = p.x - b.cx;
        let dy = p.y - b.cy;
        let local = [c * dx + s * dy, -s * dx + c * dy, p.z - b.cz];
        let half = [b.length / 2.0, b.width / 2.0, b.height / 2.0];
        let q: Vec<f64> = local.iter().zip(half).map(|(v, h)| v.abs() - h).collect();
        let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
        let inside = q.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(0.0);
        (outside + inside).abs()
    }

    #[test]
    fn surface_points_lie_on_box() {
        let mut rng = seed::rng(5);
        let b = Box3D::new([12.0, 3.0, -0.9], [4.5, 1.9, 1.6], 0.7, 1.0).unwrap();
        let pts = sample_box_surface(&b, 80.0, &mut rng);
        assert!(!pts.is_empty());
        for p in &pts {
            assert!(distance_to_surface(&b, p) <= 1e-6);
        }
    }

    #[test]
    fn density_falls_with_range_squared() {
        let mut rng = seed::rng(17);
        let near = Box3D::new([10.0, 0.0, -0.95], [4.2, 1.8, 1.5], 0.0, 1.0).unwrap();
        let far = Box3D { cx: 20.0, ..near };
        let (mut n_near, mut n_far) = (0usize, 0usize);
        for _ in 0..100 {
            n_near += sample_box_surface(&near, 50.0, &mut rng).len();
            n_far += sample_box_surface(&far, 50.0, &mut rng).len();
        }
        let ratio = n_far as f64 / n_near as f64;
        assert!((ratio - 0.25).abs() <= 0.025, "ratio {ratio}");
    }

    #[test]
    fn constant_velocity_truth() {
        let car = Car {
            start: [0.0, 0.0],
            velocity: [1.0, 0.0],
            dims: SOURCE_SIZE,
            yaw: 0.0,
        };
        let xs: Vec<f64> = (0..10).map(|t| car.center_at(t)[0]).collect();
        assert_eq!(xs, (0..10).map(|t| t as f64).collect::<Vec<_>>());
    }

    #[test]
    fn zero_size_std_gives_exact_dims() {
        let cfg = WorldConfig {
            size_std: 0.0,
            n_sequences: 2,
            frames_per_sequence: 5,
            ..Default::default()
        };
        for seq in simulate(&cfg).unwrap() {
            for f in &seq.frames {
                for b in &f.truth {
                    assert_eq!(b.dims(), cfg.size_mean);
                    b.validate().unwrap();
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = WorldConfig {
            n_sequences: 2,
            frames_per_sequence: 6,
            ..Default::default()
        };
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        let other = WorldConfig { rng_seed: 1, ..cfg.clone() };
        assert_ne!(simulate(&cfg).unwrap(), simulate(&other).unwrap());
    }

    #[test]
    fn crowded_region_errors() {
        let cfg = WorldConfig {
            cars_per_sequence: [30, 30],
            spawn_x: [10.0, 12.0],
            spawn_y: [0.0, 2.0],
            ..Default::default()
        };
        assert!(matches!(simulate(&cfg), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn scaled_truth_inverts_rescale() {
        let b = Box3D::new([10.0, -2.0, 1.0], [4.0, 2.0, 1.5], 0.0, 1.0).unwrap();
        let w = ScaleTriple::new(1.3, 1.3, 1.15).unwrap();
        let s = scaled_truth(&[b], &w)[0];
        for (got, want) in s.dims().iter().zip([5.2, 2.6, 1.725]) {
            assert!((got - want).abs() < 1e-12);
        }
        let back = rescale_box(&s, &w);
        assert!(back.center().iter().zip(b.center()).all(|(a, b)| (a - b).abs() <= 1e-9));
        assert_eq!(scaled_truth(&[b], &ScaleTriple::IDENTITY), vec![b]);
    }

    #[test]
    fn presets() {
        assert_eq!(WorldConfig::preset("target-like").unwrap().size_mean, TARGET_SIZE);
        assert!(WorldConfig::preset("nope").is_err());
    }
}
