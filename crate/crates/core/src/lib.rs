//! Source-free scale adaptation for LiDAR 3D car detection.
//!
//! A frozen detector is run on target clouds rescaled by a grid of
//! per-axis factors; each factor is scored by the temporal size coherency of
//! tracked detections, the best factors drive pseudo-labelling, and the
//! pseudo-labels adapt the detector.

pub mod assignment;
pub mod dataio;
pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod pseudolabel;
pub mod scalesearch;
pub mod scoring;
pub mod seed;
pub mod sim;
pub mod tracking;

pub use error::{Error, Result};
pub use geometry::{Box3D, Point3, ScaleTriple};
