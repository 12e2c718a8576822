//! Two-view DLT triangulation, fusion of pairwise estimates, and
//! reconstruction quality statistics.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix4, RowVector4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraModel, ErrorStats, ProjectionMatrix, REPROJECTION_THRESHOLD_PX};
use crate::linalg::symmetric_eigen;
use crate::matcher::{Correspondence, DetectionLookup, FeatureMatch};
use crate::{CameraId, FrameIndex};

/// Default fusion radius for pairwise estimates of the same bird, meters.
pub const DEFAULT_FUSION_RADIUS: f64 = 0.15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructError {
    #[error("degenerate rays: eigenvalue gap {0:e} below tolerance")]
    DegenerateRays(f64),
    #[error("triangulated point is at infinity or not finite")]
    NonFiniteResult,
    #[error("unknown camera {0}")]
    UnknownCamera(CameraId),
    #[error("missing detection {detection} for camera {camera} frame {frame}")]
    MissingDetection { camera: CameraId, frame: FrameIndex, detection: u32 },
    #[error("point {0:?} outside the configured volume")]
    OutOfBounds(Vector3<f64>),
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Triangulates a pair of distorted pixel observations.
pub fn triangulate(
    x1: &Vector2<f64>,
    x2: &Vector2<f64>,
    cam1: &CameraModel,
    cam2: &CameraModel,
) -> Result<Vector3<f64>, ReconstructError> {
    let u1 = cam1.undistort_pixel(x1);
    let u2 = cam2.undistort_pixel(x2);
    triangulate_dlt(&u1, &u2, &cam1.projection_matrix(), &cam2.projection_matrix())
}

/// Homogeneous DLT on undistorted pixels.
///
/// Stacks `x·p3ᵀ − p1ᵀ` and `y·p3ᵀ − p2ᵀ` for both views, normalizes each row,
/// and takes the eigenvector of the smallest eigenvalue of `AᵀA`.
pub fn triangulate_dlt(
    x1: &Vector2<f64>,
    x2: &Vector2<f64>,
    p1: &ProjectionMatrix,
    p2: &ProjectionMatrix,
) -> Result<Vector3<f64>, ReconstructError> {
    let mut rows = [RowVector4::zeros(); 4];
    for (k, (x, p)) in [(x1, p1), (x2, p2)].into_iter().enumerate() {
        let m = p.matrix();
        rows[2 * k] = m.row(2) * x.x - m.row(0);
        rows[2 * k + 1] = m.row(2) * x.y - m.row(1);
    }
    let mut a = Matrix4::zeros();
    for (i, row) in rows.iter().enumerate() {
        let n = row.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(ReconstructError::NonFiniteResult);
        }
        a.set_row(i, &(row / n));
    }

    let normal = a.transpose() * a;
    let (values, vectors) = symmetric_eigen(&normal);
    let largest = values[3].max(f64::MIN_POSITIVE);
    if values[1] <= 1e-12 * largest {
        return Err(ReconstructError::DegenerateRays(values[1] / largest));
    }
    let h = vectors.column(0);
    if h[3].abs() < 1e-12 {
        return Err(ReconstructError::NonFiniteResult);
    }
    let point = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    if point.iter().all(|c| c.is_finite()) {
        Ok(point)
    } else {
        Err(ReconstructError::NonFiniteResult)
    }
}

/// Axis-aligned volume used to validate reconstructed points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Volume {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Self { min: self.min.map(|v| v - margin), max: self.max.map(|v| v + margin) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// One observation per correspondence.
    Pairwise,
    /// Estimates of all camera pairs within the fusion radius are merged.
    #[default]
    AllPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructConfig {
    pub fusion: FusionMode,
    pub fusion_radius: f64,
    pub bounds: Option<Volume>,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self { fusion: FusionMode::AllPairs, fusion_radius: DEFAULT_FUSION_RADIUS, bounds: None }
    }
}

/// One triangulated correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEstimate {
    pub camera_a: CameraId,
    pub camera_b: CameraId,
    pub detection_a: u32,
    pub detection_b: u32,
    pub position: Vector3<f64>,
}

impl PairEstimate {
    fn key(&self) -> (CameraId, CameraId, u32, u32) {
        (self.camera_a, self.camera_b, self.detection_a, self.detection_b)
    }
}

/// Reprojection error of a fused point in one contributing view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewError {
    pub camera: CameraId,
    pub detection: u32,
    pub error_px: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation3D {
    pub frame: FrameIndex,
    pub position: Vector3<f64>,
    /// Pairwise estimates merged into this observation, sorted.
    pub pairs: Vec<PairEstimate>,
    /// Sorted by (camera, detection).
    pub view_errors: Vec<ViewError>,
}

impl Observation3D {
    pub fn cameras(&self) -> Vec<CameraId> {
        let set: BTreeSet<_> = self.view_errors.iter().map(|e| e.camera).collect();
        set.into_iter().collect()
    }

    /// Errors in the two views of the first contributing pair.
    pub fn primary_errors(&self) -> (f64, f64) {
        let pair = &self.pairs[0];
        let find = |cam, det| {
            self.view_errors
                .iter()
                .find(|e| e.camera == cam && e.detection == det)
                .map_or(f64::NAN, |e| e.error_px)
        };
        (find(pair.camera_a, pair.detection_a), find(pair.camera_b, pair.detection_b))
    }
}

/// A correspondence that could not be triangulated.
#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub correspondence: Correspondence,
    pub error: ReconstructError,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameReconstruction {
    pub observations: Vec<Observation3D>,
    pub skipped: Vec<Skipped>,
}

/// Triangulates detection-box centers of every correspondence in one frame and
/// fuses nearby estimates. Failing correspondences are skipped, not fatal.
pub fn reconstruct_frame(
    frame: FrameIndex,
    correspondences: &[Correspondence],
    detections: &DetectionLookup,
    cameras: &BTreeMap<CameraId, CameraModel>,
    config: &ReconstructConfig,
) -> FrameReconstruction {
    let mut estimates = Vec::new();
    let mut skipped = Vec::new();
    for c in correspondences.iter().filter(|c| c.frame == frame) {
        match estimate_pair(c, detections, cameras, config) {
            Ok(e) => estimates.push(e),
            Err(error) => skipped.push(Skipped { correspondence: c.clone(), error }),
        }
    }
    estimates.sort_by_key(PairEstimate::key);

    let groups = match config.fusion {
        FusionMode::Pairwise => (0..estimates.len()).map(|i| vec![i]).collect(),
        FusionMode::AllPairs => single_linkage(&estimates, config.fusion_radius),
    };

    let observations = groups
        .into_iter()
        .map(|members| {
            let pairs: Vec<PairEstimate> = members.iter().map(|&i| estimates[i].clone()).collect();
            let position = pairs.iter().map(|p| p.position).sum::<Vector3<f64>>() / pairs.len() as f64;
            let views: BTreeSet<(CameraId, u32)> = pairs
                .iter()
                .flat_map(|p| [(p.camera_a, p.detection_a), (p.camera_b, p.detection_b)])
                .collect();
            let view_errors = views
                .into_iter()
                .map(|(camera, detection)| {
                    let error_px = match (cameras.get(&camera), detections.get(camera, frame, detection)) {
                        (Some(cam), Some(bbox)) => match cam.project(&position) {
                            Ok(px) => (px - bbox.center()).norm(),
                            Err(_) => f64::INFINITY,
                        },
                        _ => f64::NAN,
                    };
                    ViewError { camera, detection, error_px }
                })
                .collect();
            Observation3D { frame, position, pairs, view_errors }
        })
        .collect();

    FrameReconstruction { observations, skipped }
}

fn estimate_pair(
    c: &Correspondence,
    detections: &DetectionLookup,
    cameras: &BTreeMap<CameraId, CameraModel>,
    config: &ReconstructConfig,
) -> Result<PairEstimate, ReconstructError> {
    let cam_a = cameras.get(&c.camera_a).ok_or(ReconstructError::UnknownCamera(c.camera_a))?;
    let cam_b = cameras.get(&c.camera_b).ok_or(ReconstructError::UnknownCamera(c.camera_b))?;
    let center = |camera, detection| {
        detections
            .get(camera, c.frame, detection)
            .map(|b| b.center())
            .ok_or(ReconstructError::MissingDetection { camera, frame: c.frame, detection })
    };
    let xa = center(c.camera_a, c.detection_a)?;
    let xb = center(c.camera_b, c.detection_b)?;
    let position = triangulate(&xa, &xb, cam_a, cam_b)?;
    if let Some(bounds) = &config.bounds {
        if !bounds.contains(&position) {
            return Err(ReconstructError::OutOfBounds(position));
        }
    }
    Ok(PairEstimate {
        camera_a: c.camera_a,
        camera_b: c.camera_b,
        detection_a: c.detection_a,
        detection_b: c.detection_b,
        position,
    })
}

/// Connected components of the "closer than `radius`" graph. Components and
/// their members come out in index order, which makes the result independent
/// of input order once the estimates are sorted.
fn single_linkage(estimates: &[PairEstimate], radius: f64) -> Vec<Vec<usize>> {
    let n = estimates.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (estimates[i].position - estimates[j].position).norm() <= radius {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Reconstruction quality record with the row labels of the report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    #[serde(rename = "Total Keypoints")]
    pub total_keypoints: usize,
    #[serde(rename = "Average Reprojection Error (px)")]
    pub mean_error_px: f64,
    #[serde(rename = "Std. Dev Reprojection Error (px)")]
    pub std_error_px: f64,
    #[serde(rename = "Min Reprojection Error (px)")]
    pub min_error_px: f64,
    #[serde(rename = "Max Reprojection Error (px)")]
    pub max_error_px: f64,
    #[serde(rename = "% Keypoints Below 25px Error")]
    pub percent_below_25px: f64,
    /// Mean reprojection error of fused bird centers, keyed by camera id.
    #[serde(rename = "Mean Reprojection Error per Camera (px)")]
    pub mean_error_per_camera_px: BTreeMap<CameraId, f64>,
    #[serde(rename = "Observations")]
    pub observations: usize,
}

/// Keypoint-level statistics: every kept match is triangulated on its own and
/// both keypoints are compared to the reprojection of that point.
pub fn reconstruction_stats(
    observations: &[Observation3D],
    kept_matches: &[FeatureMatch],
    cameras: &BTreeMap<CameraId, CameraModel>,
) -> Result<ReconstructionReport, ReconstructError> {
    if observations.is_empty() {
        return Err(ReconstructError::EmptyInput);
    }
    let errors = keypoint_reprojection_errors(kept_matches, cameras);
    let stats = ErrorStats::from_errors(&errors, REPROJECTION_THRESHOLD_PX).map_err(|_| ReconstructError::EmptyInput)?;

    let mut per_camera: BTreeMap<CameraId, Vec<f64>> = BTreeMap::new();
    for e in observations.iter().flat_map(|o| &o.view_errors) {
        if e.error_px.is_finite() {
            per_camera.entry(e.camera).or_default().push(e.error_px);
        }
    }
    let mean_error_per_camera_px = per_camera
        .into_iter()
        .map(|(cam, errs)| (cam, errs.iter().sum::<f64>() / errs.len() as f64))
        .collect();

    Ok(ReconstructionReport {
        total_keypoints: stats.count,
        mean_error_px: stats.mean,
        std_error_px: stats.std,
        min_error_px: stats.min,
        max_error_px: stats.max,
        percent_below_25px: stats.percent_below_threshold,
        mean_error_per_camera_px,
        observations: observations.len(),
    })
}

/// Two errors per kept match that triangulates, in match order.
pub fn keypoint_reprojection_errors(matches: &[FeatureMatch], cameras: &BTreeMap<CameraId, CameraModel>) -> Vec<f64> {
    let mut errors = Vec::with_capacity(2 * matches.len());
    for m in matches.iter().filter(|m| m.is_kept()) {
        let (Some(ca), Some(cb)) = (cameras.get(&m.camera_a), cameras.get(&m.camera_b)) else { continue };
        let Ok(x) = triangulate(&m.position_a, &m.position_b, ca, cb) else { continue };
        let (Ok(pa), Ok(pb)) = (ca.project(&x), cb.project(&x)) else { continue };
        errors.push((pa - m.position_a).norm());
        errors.push((pb - m.position_b).norm());
    }
    errors
}
