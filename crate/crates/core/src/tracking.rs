//! Tracking-by-detection: a constant-velocity Kalman filter over
//! (cx, cy, cz, yaw, l, w, h, vx, vy, vz), optimal IoU assignment and a
//! birth/death lifecycle.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::dataio::FrameDetections;
use crate::error::{Error, Result};
use crate::geometry::{iou_3d, normalize_angle, Box3D};

const STATE: usize = 10;
const MEAS: usize = 7;
const MIN_STATE_DIM: f64 = 1e-3;

type StateVec = SVector<f64, STATE>;
type StateMat = SMatrix<f64, STATE, STATE>;
type MeasMat = SMatrix<f64, MEAS, STATE>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub birth_threshold: u32,
    pub death_threshold: u32,
    pub min_iou: f64,
    /// Measurement std of centre and dimensions, meters.
    pub meas_std: f64,
    pub meas_std_yaw: f64,
    /// Process noise std of velocity components.
    pub process_std_vel: f64,
    /// Process noise std of every other component.
    pub process_std: f64,
    pub init_vel_var: f64,
    /// Report raw matched detections instead of corrected states.
    pub raw_boxes: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            birth_threshold: 2,
            death_threshold: 2,
            min_iou: 0.01,
            meas_std: 0.1,
            meas_std_yaw: 0.1,
            process_std_vel: 0.1,
            process_std: 0.01,
            init_vel_var: 10.0,
            raw_boxes: false,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.birth_threshold < 1 || self.death_threshold < 1 {
            return Err(Error::InvalidInput("birth/death thresholds must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_iou) {
            return Err(Error::InvalidInput(format!("min_iou {} outside [0, 1]", self.min_iou)));
        }
        let stds = [
            self.meas_std,
            self.meas_std_yaw,
            self.process_std_vel,
            self.process_std,
            self.init_vel_var,
        ];
        if stds.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("tracker noise parameters must be >= 0".into()));
        }
        Ok(())
    }

    fn transition(&self) -> StateMat {
        let mut f = StateMat::identity();
        f[(0, 7)] = 1.0;
        f[(1, 8)] = 1.0;
        f[(2, 9)] = 1.0;
        f
    }

    fn process_noise(&self) -> StateMat {
        let mut q = StateMat::zeros();
        for i in 0..STATE {
            let s = if i >= 7 { self.process_std_vel } else { self.process_std };
            q[(i, i)] = s * s;
        }
        q
    }

    fn measurement_noise(&self) -> SMatrix<f64, MEAS, MEAS> {
        let mut r = SMatrix::<f64, MEAS, MEAS>::zeros();
        for i in 0..MEAS {
            let s = if i == 3 { self.meas_std_yaw } else { self.meas_std };
            r[(i, i)] = s * s;
        }
        r
    }
}

fn observation() -> MeasMat {
    let mut h = MeasMat::zeros();
    for i in 0..MEAS {
        h[(i, i)] = 1.0;
    }
    h
}

fn measurement(b: &Box3D) -> SVector<f64, MEAS> {
    SVector::<f64, MEAS>::from([b.cx, b.cy, b.cz, b.yaw, b.length, b.width, b.height])
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVec,
    pub covariance: StateMat,
}

impl KalmanState {
    /// Initial state at a detection with zero velocity.
    pub fn from_box(b: &Box3D, config: &TrackerConfig) -> Self {
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<MEAS>(0).copy_from(&measurement(b));
        let mut covariance = StateMat::zeros();
        let r = config.measurement_noise();
        for i in 0..MEAS {
            covariance[(i, i)] = r[(i, i)];
        }
        for i in MEAS..STATE {
            covariance[(i, i)] = config.init_vel_var;
        }
        Self { mean, covariance }
    }

    pub fn to_box(&self, score: f64) -> Box3D {
        let m = &self.mean;
        Box3D {
            cx: m[0],
            cy: m[1],
            cz: m[2],
            yaw: normalize_angle(m[3]),
            length: m[4].max(MIN_STATE_DIM),
            width: m[5].max(MIN_STATE_DIM),
            height: m[6].max(MIN_STATE_DIM),
            score,
        }
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.mean[7], self.mean[8], self.mean[9]]
    }
}

fn symmetrize(p: &StateMat) -> StateMat {
    (p + p.transpose()) * 0.5
}

/// Constant-velocity prediction one frame ahead.
pub fn predict(state: &KalmanState, config: &TrackerConfig) -> KalmanState {
    let f = config.transition();
    let mut mean = f * state.mean;
    mean[3] = normalize_angle(mean[3]);
    let covariance = symmetrize(&(f * state.covariance * f.transpose() + config.process_noise()));
    KalmanState { mean, covariance }
}

/// Kalman correction with a detected box. The yaw innovation is folded into
/// (-π/2, π/2] since a box does not reveal its heading sign.
pub fn update(state: &KalmanState, det: &Box3D, config: &TrackerConfig) -> KalmanState {
    let h = observation();
    let mut innovation = measurement(det) - h * state.mean;
    let mut dyaw = normalize_angle(innovation[3]);
    if dyaw > FRAC_PI_2 {
        dyaw -= PI;
    } else if dyaw <= -FRAC_PI_2 {
        dyaw += PI;
    }
    innovation[3] = dyaw;

    let r = config.measurement_noise();
    let s = h * state.covariance * h.transpose() + r;
    let Some(s_inv) = s.try_inverse() else {
        return state.clone();
    };
    let gain = state.covariance * h.transpose() * s_inv;
    let mut mean = state.mean + gain * innovation;
    mean[3] = normalize_angle(mean[3]);
    // Joseph form keeps the covariance PSD.
    let ikh = StateMat::identity() - gain * h;
    let covariance = symmetrize(&(ikh * state.covariance * ikh.transpose() + gain * r * gain.transpose()));
    KalmanState { mean, covariance }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// (prediction index, detection index)
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Maximum-total-IoU assignment; pairs below `min_iou` are demoted to unmatched.
pub fn associate(predicted: &[Box3D], detections: &[Box3D], min_iou: f64) -> Association {
    let iou: Vec<Vec<f64>> = predicted
        .iter()
        .map(|p| detections.iter().map(|d| iou_3d(p, d)).collect())
        .collect();
    let cost: Vec<Vec<f64>> = iou.iter().map(|row| row.iter().map(|v| -v).collect()).collect();
    let assigned = if predicted.is_empty() || detections.is_empty() {
        vec![None; predicted.len()]
    } else {
        assignment::solve_min_cost(&cost)
    };
    let mut out = Association::default();
    let mut det_used = vec![false; detections.len()];
    for (t, a) in assigned.into_iter().enumerate() {
        match a {
            Some(d) if iou[t][d] >= min_iou && iou[t][d] > 0.0 => {
                out.matches.push((t, d));
                det_used[d] = true;
            }
            _ => out.unmatched_tracks.push(t),
        }
    }
    out.unmatched_detections = (0..detections.len()).filter(|&d| !det_used[d]).collect();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    /// Index of the frame holding `boxes[0]`.
    pub start_frame: usize,
    pub boxes: Vec<Box3D>,
    pub hit_count: u32,
    pub miss_count: u32,
    /// Detection index matched in each frame, `None` where the box was predicted.
    pub detection_indices: Vec<Option<usize>>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn volumes(&self) -> impl Iterator<Item = f64> + '_ {
        self.boxes.iter().map(Box3D::volume)
    }
}

struct LiveTrack {
    track: Track,
    state: KalmanState,
    confirmed: bool,
    /// Consecutive misses.
    misses: u32,
    last_score: f64,
}

impl LiveTrack {
    fn finish(mut self) -> Option<Track> {
        if !self.confirmed {
            return None;
        }
        // trailing predicted boxes are not part of the track
        while self.track.detection_indices.last() == Some(&None) {
            self.track.detection_indices.pop();
            self.track.boxes.pop();
        }
        Some(self.track)
    }
}

/// Tracks objects through one sequence. Frames must carry consecutive
/// ascending `frame_index` values. Only confirmed tracks are returned,
/// ordered by id.
pub fn run_tracker(frames: &[FrameDetections], config: &TrackerConfig) -> Result<Vec<Track>> {
    config.validate()?;
    for w in frames.windows(2) {
        if w[1].frame_index != w[0].frame_index + 1 {
            return Err(Error::Validation(format!(
                "frames must be consecutive and ascending: index {} follows {}",
                w[1].frame_index, w[0].frame_index
            )));
        }
    }
    let mut live: Vec<LiveTrack> = Vec::new();
    let mut done: Vec<Track> = Vec::new();
    let mut next_id = 0u64;

    for (k, frame) in frames.iter().enumerate() {
        for t in live.iter_mut() {
            t.state = predict(&t.state, config);
        }
        let predicted: Vec<Box3D> = live.iter().map(|t| t.state.to_box(t.last_score)).collect();
        let assoc = associate(&predicted, &frame.boxes, config.min_iou);

        for &(ti, di) in &assoc.matches {
            let det = &frame.boxes[di];
            let t = &mut live[ti];
            t.state = update(&t.state, det, config);
            t.last_score = det.score;
            t.misses = 0;
            t.track.hit_count += 1;
            let b = if config.raw_boxes { *det } else { t.state.to_box(det.score) };
            t.track.boxes.push(b);
            t.track.detection_indices.push(Some(di));
            if t.track.hit_count >= config.birth_threshold {
                t.confirmed = true;
            }
        }
        for &ti in &assoc.unmatched_tracks {
            let t = &mut live[ti];
            t.misses += 1;
            t.track.miss_count += 1;
            t.track.boxes.push(predicted[ti]);
            t.track.detection_indices.push(None);
        }
        let (dead, alive): (Vec<_>, Vec<_>) =
            live.into_iter().partition(|t| t.misses >= config.death_threshold);
        live = alive;
        done.extend(dead.into_iter().filter_map(LiveTrack::finish));

        for &di in &assoc.unmatched_detections {
            let det = &frame.boxes[di];
            live.push(LiveTrack {
                track: Track {
                    track_id: next_id,
                    start_frame: k,
                    boxes: vec![*det],
                    hit_count: 1,
                    miss_count: 0,
                    detection_indices: vec![Some(di)],
                },
                state: KalmanState::from_box(det, config),
                confirmed: config.birth_threshold <= 1,
                misses: 0,
                last_score: det.score,
            });
            next_id += 1;
        }
    }
    done.extend(live.into_iter().filter_map(LiveTrack::finish));
    done.sort_by_key(|t| t.track_id);
    Ok(done)
}
