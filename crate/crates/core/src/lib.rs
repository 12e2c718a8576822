//! Multi-view 3D tracking of visually similar birds.
//!
//! The pipeline ingests per-camera detections and keypoints, restricts
//! keypoints to bird pixels, matches them across camera pairs, rejects
//! matches whose nearest environmental landmark disagrees between the two
//! views, clusters surviving matches into detection correspondences,
//! triangulates bird centers and tracks them in 3D with a constant-acceleration
//! Kalman filter.
//!
//! [`synthworld`] generates complete datasets with ground truth in the same
//! file formats, which is how every stage is verified end to end.

pub mod camera;
pub mod config;
pub mod io;
pub mod linalg;
pub mod mask;
pub mod matcher;
pub mod metrics;
pub mod pipeline;
pub mod reconstruct;
pub mod synthworld;
pub mod tracker;
pub mod voronoi;

pub use nalgebra::{Matrix3, Vector2, Vector3};

/// Camera identifier as used in every file format.
pub type CameraId = u32;

/// Zero-based frame index.
pub type FrameIndex = u32;
