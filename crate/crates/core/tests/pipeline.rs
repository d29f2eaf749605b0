use std::path::PathBuf;

use scaleadapt_core::dataio::{self, LoadedFrame, LoadedSequence};
use scaleadapt_core::detector::{ExternalDetector, ExternalSpec, SurrogateDetector, SurrogatePrior};
use scaleadapt_core::pseudolabel::{annotate, AnnotationConfig, AnnotationMode};
use scaleadapt_core::scalesearch::{build_grid, detect_sequence, scale_and_detect, sweep, ScaleInterval};
use scaleadapt_core::scoring::ScoringConfig;
use scaleadapt_core::sim::{self, WorldConfig};
use scaleadapt_core::tracking::TrackerConfig;
use scaleadapt_core::{Box3D, Error, Point3, ScaleTriple};
use tempfile::TempDir;

fn small_world(seed: u64) -> (WorldConfig, Vec<LoadedSequence>) {
    let cfg = WorldConfig {
        n_sequences: 2,
        frames_per_sequence: 12,
        rng_seed: seed,
        ..WorldConfig::default()
    };
    let seqs = sim::simulate(&cfg)
        .unwrap()
        .into_iter()
        .map(|s| LoadedSequence {
            sequence_id: s.sequence_id,
            frame_rate_hz: cfg.frame_rate_hz,
            frames: s
                .frames
                .into_iter()
                .map(|f| LoadedFrame {
                    frame_id: f.frame_id,
                    cloud_path: PathBuf::new(),
                    truth: f.truth,
                })
                .collect(),
        })
        .collect();
    (cfg, seqs)
}

fn perfect(size: [f64; 3]) -> SurrogateDetector {
    SurrogateDetector::new(SurrogatePrior {
        sigma0: 0.0,
        alpha: 0.0,
        gamma: 0.0,
        fp_rate: 0.0,
        p_min: 1.0,
        ..SurrogatePrior::default().with_mean_dims(size)
    })
    .unwrap()
}

fn close(a: &Box3D, b: &Box3D, tol: f64) -> bool {
    [a.cx - b.cx, a.cy - b.cy, a.cz - b.cz, a.length - b.length, a.width - b.width, a.height - b.height, a.yaw - b.yaw]
        .iter()
        .all(|d| d.abs() <= tol)
}

#[test]
fn perfect_detections_are_scale_invariant_after_rescaling() {
    let (cfg, seqs) = small_world(1);
    let det = perfect(cfg.size_mean);
    let grid = build_grid(0.3, 5).unwrap();
    for (si, w) in grid.scales.iter().enumerate().step_by(7) {
        let frames = detect_sequence(&det, &seqs[0], w, si).unwrap();
        for (f, fd) in seqs[0].frames.iter().zip(&frames) {
            assert_eq!(f.truth.len(), fd.boxes.len());
            for (t, d) in f.truth.iter().zip(&fd.boxes) {
                assert!(close(t, d, 1e-9), "scale {w}: {t:?} vs {d:?}");
            }
        }
    }
}

#[test]
fn sweep_ranks_every_grid_point_once() {
    let (_, seqs) = small_world(2);
    let det = SurrogateDetector::new(SurrogatePrior::default()).unwrap();
    let grid = build_grid(0.3, 3).unwrap();
    let ranked = sweep(&seqs, &det, &grid, &TrackerConfig::default(), &ScoringConfig::default()).unwrap();
    assert_eq!(ranked.len(), grid.len());
    assert!(ranked.windows(2).all(|p| p[0].score <= p[1].score));
    let again = sweep(&seqs, &det, &grid, &TrackerConfig::default(), &ScoringConfig::default()).unwrap();
    assert_eq!(ranked, again);
    assert!(matches!(
        sweep(&[], &det, &grid, &TrackerConfig::default(), &ScoringConfig::default()),
        Err(Error::Validation(_))
    ));
}

#[test]
fn perfect_annotation_collapses_duplicates() {
    let (cfg, seqs) = small_world(3);
    let det = perfect(cfg.size_mean);
    let acfg = AnnotationConfig::default();
    let out = annotate(&seqs, &det, &ScaleInterval::point(ScaleTriple::IDENTITY), &acfg).unwrap();
    let n_truth: usize = seqs.iter().flat_map(|s| &s.frames).map(|f| f.truth.len()).sum();
    assert_eq!(out.box_count(), n_truth);
    assert_eq!(out.candidates, n_truth * acfg.passes_per_threshold * acfg.thresholds.len());
    for (seq, labels) in seqs.iter().zip(&out.labels) {
        for (f, boxes) in seq.frames.iter().zip(labels) {
            for b in boxes {
                assert!(f.truth.iter().any(|t| close(t, b, 1e-9)));
            }
        }
    }
}

#[test]
fn degenerate_multi_scale_equals_single_scale() {
    let (_, seqs) = small_world(4);
    let det = SurrogateDetector::new(SurrogatePrior::default()).unwrap();
    let w = ScaleTriple::new(1.15, 1.0, 0.85).unwrap();
    let iv = ScaleInterval::point(w);
    let ss = annotate(&seqs, &det, &iv, &AnnotationConfig::default()).unwrap();
    let ms = annotate(
        &seqs,
        &det,
        &iv,
        &AnnotationConfig {
            mode: AnnotationMode::Ms(3),
            ..AnnotationConfig::default()
        },
    )
    .unwrap();
    assert_eq!(ss, ms);
}

#[test]
fn annotation_is_deterministic_and_rejects_ss_on_interval() {
    let (_, seqs) = small_world(5);
    let det = SurrogateDetector::new(SurrogatePrior::default()).unwrap();
    let iv = ScaleInterval::cube(0.3);
    let cfg = AnnotationConfig {
        mode: AnnotationMode::Ms(3),
        rng_seed: 9,
        ..AnnotationConfig::default()
    };
    let a = annotate(&seqs, &det, &iv, &cfg).unwrap();
    let b = annotate(&seqs, &det, &iv, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.box_count() > 0);
    assert!(annotate(&seqs, &det, &iv, &AnnotationConfig::default()).is_err());
}

fn one_frame(dir: &TempDir) -> LoadedFrame {
    let cloud_path = dir.path().join("f.bin");
    dataio::write_cloud(&cloud_path, &[Point3::new(10.0, 0.0, -1.0, 0.3), Point3::new(12.0, 1.0, -0.5, 0.1)]).unwrap();
    LoadedFrame {
        frame_id: "000000".into(),
        cloud_path,
        truth: vec![],
    }
}

#[test]
fn external_detector_output_is_rescaled() {
    let dir = TempDir::new().unwrap();
    let frame = one_frame(&dir);
    let det = ExternalDetector::new(ExternalSpec {
        command: "sh".into(),
        args: vec![
            "-c".into(),
            "test -s \"$1\" && echo 'Car 0 0 0 0 0 0 0 1.8 2.4 6.0 12 0 -1.2 0.5 0.8' > \"$SCALEADAPT_OUTPUT\"".into(),
            "sh".into(),
            "{cloud}".into(),
        ],
        fov_deg: None,
        classes: Default::default(),
        work_dir: Some(dir.path().join("work")),
    })
    .unwrap();
    let w = ScaleTriple::new(1.2, 1.2, 1.2).unwrap();
    let boxes = scale_and_detect(&det, "s", &frame, &w, 0).unwrap();
    assert_eq!(boxes.len(), 1);
    let want = Box3D::new([10.0, 0.0, -1.0], [5.0, 2.0, 1.5], 0.5, 0.8).unwrap();
    assert!(close(&boxes[0], &want, 1e-9), "{:?}", boxes[0]);
}

#[test]
fn failing_external_detector_reports_the_frame() {
    let dir = TempDir::new().unwrap();
    let frame = one_frame(&dir);
    let det = ExternalDetector::new(ExternalSpec {
        command: "sh".into(),
        args: vec!["-c".into(), "echo broken >&2; exit 3".into()],
        fov_deg: None,
        classes: Default::default(),
        work_dir: Some(dir.path().join("work")),
    })
    .unwrap();
    match scale_and_detect(&det, "s", &frame, &ScaleTriple::IDENTITY, 0) {
        Err(Error::Detector(msg)) => assert!(msg.contains("broken"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}
