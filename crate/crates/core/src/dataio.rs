//! On-disk formats: binary point clouds, KITTI-style label text and the
//! TOML sequence manifest.
//!
//! Manifest schema (paths are relative to the manifest's directory):
//!
//! ```toml
//! [[sequence]]
//! id = "seq_000"
//! frame_rate_hz = 10.0
//!
//! [[sequence.frame]]
//! id = "000000"
//! cloud = "clouds/seq_000/000000.bin"
//! labels = "labels/seq_000/000000.txt"   # optional
//! timestamp = 0.0                         # optional, strictly increasing
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, Point3};

const RECORD_BYTES: usize = 16;

/// Reads a headerless little-endian cloud of `(x, y, z, intensity)` f32 records.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<Vec<Point3>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cloud(&bytes).map_err(|(offset, message)| Error::Format {
        path: path.to_path_buf(),
        location: format!("byte {offset}"),
        message,
    })
}

fn decode_cloud(bytes: &[u8]) -> std::result::Result<Vec<Point3>, (usize, String)> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        let offset = bytes.len() - bytes.len() % RECORD_BYTES;
        return Err((
            offset,
            format!(
                "truncated record: {} trailing bytes (file length {} is not a multiple of 16)",
                bytes.len() % RECORD_BYTES,
                bytes.len()
            ),
        ));
    }
    let mut out = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let mut v = [0f64; 4];
        for (k, slot) in v.iter_mut().enumerate() {
            let raw: [u8; 4] = rec[k * 4..k * 4 + 4].try_into().expect("4-byte slice");
            let f = f32::from_le_bytes(raw);
            if !f.is_finite() {
                return Err((i * RECORD_BYTES + k * 4, format!("non-finite value {f}")));
            }
            *slot = f as f64;
        }
        out.push(Point3::new(v[0], v[1], v[2], v[3]));
    }
    Ok(out)
}

pub fn encode_cloud(cloud: &[Point3]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for p in cloud {
        for v in [p.x, p.y, p.z, p.intensity] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    bytes
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &[Point3]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cloud(cloud)).map_err(|e| Error::io(path, e))
}

/// Object classes kept by the label reader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet(pub Vec<String>);

impl Default for ClassSet {
    fn default() -> Self {
        ClassSet(vec!["Car".to_string()])
    }
}

impl ClassSet {
    pub fn contains(&self, class: &str) -> bool {
        self.0.iter().any(|c| c == class)
    }
}

/// Reads a label file keeping only the default class set (`Car`).
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<Box3D>> {
    read_labels_with_classes(path, &ClassSet::default())
}

pub fn read_labels_with_classes(path: impl AsRef<Path>, classes: &ClassSet) -> Result<Vec<Box3D>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, classes).map_err(|(line, message)| Error::Format {
        path: path.to_path_buf(),
        location: format!("line {line}"),
        message,
    })
}

/// Parses label text. Each object line is
/// `type trunc occl alpha x1 y1 x2 y2 h w l x y z ry [score]`.
pub fn parse_labels(
    text: &str,
    classes: &ClassSet,
) -> std::result::Result<Vec<Box3D>, (usize, String)> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 15 && fields.len() != 16 {
            return Err((lineno, format!("expected 15 or 16 fields, found {}", fields.len())));
        }
        let mut nums = [0f64; 15];
        for (k, tok) in fields[1..].iter().enumerate() {
            nums[k] = tok
                .parse::<f64>()
                .map_err(|_| (lineno, format!("field {} is not a number: '{tok}'", k + 2)))?;
        }
        if !classes.contains(fields[0]) {
            continue;
        }
        let [h, w, l, x, y, z, ry] = [nums[7], nums[8], nums[9], nums[10], nums[11], nums[12], nums[13]];
        let score = if fields.len() == 16 { nums[14] } else { 1.0 };
        // "-3.141593" is how -pi prints at six decimals
        let ry = if (-std::f64::consts::PI - 1e-5..-std::f64::consts::PI).contains(&ry) {
            -std::f64::consts::PI
        } else {
            ry
        };
        let b = Box3D::new([x, y, z], [l, w, h], ry, score.clamp(0.0, 1.0))
            .map_err(|e| (lineno, e.to_string()))?;
        boxes.push(b);
    }
    Ok(boxes)
}

/// Formats boxes as `Car` label lines with six decimals and zeroed 2D fields.
pub fn format_labels(boxes: &[Box3D]) -> String {
    let mut out = String::new();
    for b in boxes {
        writeln!(
            out,
            "Car 0.00 0 0.00 0.00 0.00 0.00 0.00 {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            b.height, b.width, b.length, b.cx, b.cy, b.cz, b.yaw, b.score
        )
        .expect("writing to String");
    }
    out
}

pub fn write_labels(path: impl AsRef<Path>, boxes: &[Box3D]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_labels(boxes)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: String,
    pub cloud_path: PathBuf,
    pub label_path: Option<PathBuf>,
    pub timestamp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub sequence_id: String,
    pub frames: Vec<FrameEntry>,
    pub frame_rate_hz: f64,
}

/// Detections (or labels) of one frame. `frame_index` is the frame's
/// position within its sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_id: String,
    pub frame_index: usize,
    pub boxes: Vec<Box3D>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    #[serde(default)]
    sequence: Vec<RawSequence>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSequence {
    id: String,
    frame_rate_hz: f64,
    #[serde(default)]
    frame: Vec<RawFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    id: String,
    cloud: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<f64>,
}

/// Loads and validates a manifest. Referenced cloud and label files must
/// exist; frame order is preserved.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SequenceManifest>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: ManifestFile = toml::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        location: e
            .span()
            .map(|s| format!("byte {}", s.start))
            .unwrap_or_else(|| "unknown".into()),
        message: e.message().to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let mut seq_ids = HashSet::new();
    let mut out = Vec::with_capacity(raw.sequence.len());
    for seq in raw.sequence {
        if !seq_ids.insert(seq.id.clone()) {
            return Err(Error::Validation(format!("duplicate sequence id '{}'", seq.id)));
        }
        if !(seq.frame_rate_hz.is_finite() && seq.frame_rate_hz > 0.0) {
            return Err(Error::Validation(format!(
                "sequence '{}': frame_rate_hz must be positive",
                seq.id
            )));
        }
        let mut frame_ids = HashSet::new();
        let mut last_ts: Option<f64> = None;
        let mut frames = Vec::with_capacity(seq.frame.len());
        for f in seq.frame {
            if !frame_ids.insert(f.id.clone()) {
                return Err(Error::Validation(format!(
                    "sequence '{}': duplicate frame id '{}'",
                    seq.id, f.id
                )));
            }
            if let Some(ts) = f.timestamp {
                if last_ts.is_some_and(|prev| ts <= prev) {
                    return Err(Error::Validation(format!(
                        "sequence '{}': frame '{}' timestamp is not strictly increasing",
                        seq.id, f.id
                    )));
                }
                last_ts = Some(ts);
            }
            let cloud_path = resolve(&f.cloud);
            if !cloud_path.is_file() {
                return Err(Error::Validation(format!(
                    "missing cloud file {}",
                    cloud_path.display()
                )));
            }
            let label_path = f.labels.as_deref().map(resolve);
            if let Some(lp) = &label_path {
                if !lp.is_file() {
                    return Err(Error::Validation(format!("missing label file {}", lp.display())));
                }
            }
            frames.push(FrameEntry {
                frame_id: f.id,
                cloud_path,
                label_path,
                timestamp: f.timestamp,
            });
        }
        out.push(SequenceManifest {
            sequence_id: seq.id,
            frames,
            frame_rate_hz: seq.frame_rate_hz,
        });
    }
    Ok(out)
}

/// Writes a manifest; paths under the manifest's directory are stored relative.
pub fn write_manifest(path: impl AsRef<Path>, manifests: &[SequenceManifest]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let rel = |p: &Path| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    let file = ManifestFile {
        sequence: manifests
            .iter()
            .map(|m| RawSequence {
                id: m.sequence_id.clone(),
                frame_rate_hz: m.frame_rate_hz,
                frame: m
                    .frames
                    .iter()
                    .map(|f| RawFrame {
                        id: f.frame_id.clone(),
                        cloud: rel(&f.cloud_path),
                        labels: f.label_path.as_deref().map(rel),
                        timestamp: f.timestamp,
                    })
                    .collect(),
            })
            .collect(),
    };
    let text = toml::to_string(&file)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize manifest: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A frame with its ground-truth (or scene) boxes loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedFrame {
    pub frame_id: String,
    pub cloud_path: PathBuf,
    pub truth: Vec<Box3D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSequence {
    pub sequence_id: String,
    pub frame_rate_hz: f64,
    pub frames: Vec<LoadedFrame>,
}

/// Reads each frame's label file (if any) alongside the manifest entries.
pub fn load_sequences(manifests: &[SequenceManifest], classes: &ClassSet) -> Result<Vec<LoadedSequence>> {
    manifests
        .iter()
        .map(|m| {
            let frames = m
                .frames
                .iter()
                .map(|f| {
                    let truth = match &f.label_path {
                        Some(p) => read_labels_with_classes(p, classes)?,
                        None => Vec::new(),
                    };
                    Ok(LoadedFrame {
                        frame_id: f.frame_id.clone(),
                        cloud_path: f.cloud_path.clone(),
                        truth,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LoadedSequence {
                sequence_id: m.sequence_id.clone(),
                frame_rate_hz: m.frame_rate_hz,
                frames,
            })
        })
        .collect()
}

/// Path of a per-frame label file under an output root: `root/<sequence>/<frame>.txt`.
pub fn label_tree_path(root: &Path, sequence_id: &str, frame_id: &str) -> PathBuf {
    root.join(sequence_id).join(format!("{frame_id}.txt"))
}

/// Writes one label file per frame, mirroring the sequence layout.
/// Returns the written paths in sequence/frame order.
pub fn write_label_tree(
    root: &Path,
    sequences: &[LoadedSequence],
    labels: &[Vec<Vec<Box3D>>],
) -> Result<Vec<PathBuf>> {
    if sequences.len() != labels.len() {
        return Err(Error::InvalidInput("label tree does not match sequences".into()));
    }
    let mut written = Vec::new();
    for (seq, seq_labels) in sequences.iter().zip(labels) {
        if seq.frames.len() != seq_labels.len() {
            return Err(Error::InvalidInput(format!(
                "sequence '{}': {} frames but {} label sets",
                seq.sequence_id,
                seq.frames.len(),
                seq_labels.len()
            )));
        }
        let dir = root.join(&seq.sequence_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (frame, boxes) in seq.frames.iter().zip(seq_labels) {
            let p = label_tree_path(root, &seq.sequence_id, &frame.frame_id);
            write_labels(&p, boxes)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Reads a label tree written by [`write_label_tree`] for the given sequences.
pub fn read_label_tree(root: &Path, sequences: &[LoadedSequence]) -> Result<Vec<Vec<Vec<Box3D>>>> {
    sequences
        .iter()
        .map(|seq| {
            seq.frames
                .iter()
                .map(|f| read_labels(label_tree_path(root, &seq.sequence_id, &f.frame_id)))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_two_points() {
        let cloud = vec![Point3::new(1.0, 2.0, 3.0, 0.5), Point3::new(-1.0, 0.0, 2.0, 0.1)];
        let bytes = encode_cloud(&cloud);
        assert_eq!(bytes.len(), 32);
        let back = decode_cloud(&bytes).unwrap();
        assert_eq!(back[0], cloud[0]);
        assert_eq!(back[1].x, -1.0);
        assert_eq!(back[1].intensity, 0.1f32 as f64);
    }

    #[test]
    fn empty_and_truncated_clouds() {
        assert!(decode_cloud(&[]).unwrap().is_empty());
        let (offset, _) = decode_cloud(&[0u8; 17]).unwrap_err();
        assert_eq!(offset, 16);
    }

    #[test]
    fn non_finite_point_rejected() {
        let mut bytes = encode_cloud(&[Point3::new(1.0, 2.0, 3.0, 0.0)]);
        bytes[4..8].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(decode_cloud(&bytes).unwrap_err().0, 4);
    }

    #[test]
    fn label_field_mapping() {
        let boxes = parse_labels("Car 0 0 0 0 0 0 0 1.5 2.0 4.0 10 -2 1 0 0.9\n", &ClassSet::default()).unwrap();
        let b = boxes[0];
        assert_eq!((b.cx, b.cy, b.cz), (10.0, -2.0, 1.0));
        assert_eq!((b.length, b.width, b.height), (4.0, 2.0, 1.5));
        assert_eq!((b.yaw, b.score), (0.0, 0.9));
    }

    #[test]
    fn class_filter_and_default_score() {
        let text = "Pedestrian 0 0 0 0 0 0 0 1.7 0.6 0.8 5 1 0 0 0.5\n\
                    Car 0 0 0 0 0 0 0 1.5 2.0 4.0 10 -2 1 0.3\n";
        let boxes = parse_labels(text, &ClassSet::default()).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].score, 1.0);
        let both = ClassSet(vec!["Car".into(), "Pedestrian".into()]);
        assert_eq!(parse_labels(text, &both).unwrap().len(), 2);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "Car 0 0 0 0 0 0 0 1.5 2.0 4.0 10 -2 1 0\nCar 0 0 0\n";
        assert_eq!(parse_labels(text, &ClassSet::default()).unwrap_err().0, 2);
        let text = "Car 0 0 0 0 0 0 0 1.5 2.0 x 10 -2 1 0\n";
        assert_eq!(parse_labels(text, &ClassSet::default()).unwrap_err().0, 1);
        let text = "Car 0 0 0 0 0 0 0 1.5 2.0 0 10 -2 1 0\n";
        assert_eq!(parse_labels(text, &ClassSet::default()).unwrap_err().0, 1);
    }

    #[test]
    fn write_labels_one_line_and_empty() {
        let b = Box3D::new([10.0, -2.0, 1.0], [4.0, 2.0, 1.5], 0.0, 0.9).unwrap();
        let text = format_labels(&[b]);
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.split_whitespace().count(), 16);
        assert_eq!(parse_labels(&text, &ClassSet::default()).unwrap()[0], b);
        assert_eq!(format_labels(&[]), "");
    }

    #[test]
    fn minus_pi_yaw_round_trips() {
        let b = Box3D::new([1.0, 2.0, 0.0], [4.0, 2.0, 1.5], -std::f64::consts::PI, 0.5).unwrap();
        let back = parse_labels(&format_labels(&[b]), &ClassSet::default()).unwrap()[0];
        assert_eq!(back.yaw, -std::f64::consts::PI);
    }

    proptest! {
        #[test]
        fn cloud_length_is_bytes_over_16(pts in proptest::collection::vec((-100.0..100.0f32, -100.0..100.0f32, -5.0..5.0f32, 0.0..1.0f32), 0..64)) {
            let cloud: Vec<Point3> = pts.iter().map(|&(x, y, z, i)| Point3::new(x as f64, y as f64, z as f64, i as f64)).collect();
            let bytes = encode_cloud(&cloud);
            prop_assert_eq!(decode_cloud(&bytes).unwrap(), cloud);
            prop_assert_eq!(bytes.len() / 16, pts.len());
        }
    }
}
