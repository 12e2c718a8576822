//! Cross-view keypoint matching, landmark-based rejection and clustering into
//! detection correspondences.
//!
//! Brute-force kNN matching with Lowe's ratio test proposes candidate pairs.
//! A candidate survives only if both keypoints have the same nearest landmark
//! in their respective camera views. Surviving matches are grouped by the
//! detection boxes they connect, and each detection is paired at most once.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::BoundingBox;
use crate::voronoi::{LandmarkSet, VoronoiError};
use crate::{CameraId, FrameIndex};

pub const DEFAULT_RATIO: f64 = 0.75;
pub const DEFAULT_K: usize = 2;
pub const DEFAULT_MIN_SUPPORT: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("descriptor length mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("ratio test needs k >= 2, got k = {0}")]
    InvalidK(usize),
    #[error(transparent)]
    Landmarks(#[from] VoronoiError),
    #[error("no detection {detection} for camera {camera} frame {frame}")]
    MissingDetection { camera: CameraId, frame: FrameIndex, detection: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub camera: CameraId,
    pub frame: FrameIndex,
    /// Ordinal of the keypoint within its (camera, frame) as ingested.
    pub index: u32,
    pub detection_index: u32,
    pub position: Vector2<f64>,
    pub descriptor: Vec<f64>,
}

/// A detector box for one camera and frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub camera: CameraId,
    pub frame: FrameIndex,
    pub detection_index: u32,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pending,
    Kept,
    Rejected,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pending => "pending",
            Verdict::Kept => "kept",
            Verdict::Rejected => "rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatch {
    pub frame: FrameIndex,
    pub camera_a: CameraId,
    pub camera_b: CameraId,
    pub keypoint_a: u32,
    pub keypoint_b: u32,
    pub detection_a: u32,
    pub detection_b: u32,
    pub position_a: Vector2<f64>,
    pub position_b: Vector2<f64>,
    pub descriptor_distance: f64,
    pub landmark_a: Option<u32>,
    pub landmark_b: Option<u32>,
    pub verdict: Verdict,
}

impl FeatureMatch {
    pub fn is_kept(&self) -> bool {
        self.verdict == Verdict::Kept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub frame: FrameIndex,
    pub camera_a: CameraId,
    pub camera_b: CameraId,
    pub detection_a: u32,
    pub detection_b: u32,
    pub support: usize,
    pub mean_descriptor_distance: f64,
}

fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Brute-force kNN matching of `a` against `b`.
///
/// For each keypoint of `a` the `k` nearest descriptors of `b` are found
/// (ties by lower position in `b`). With `ratio = Some(r)` the nearest one is
/// emitted only when `d1 / d2 < r`; the test is skipped when `b` has fewer than
/// two keypoints. With `ratio = None` the nearest neighbor is always emitted.
pub fn knn_match(a: &[Keypoint], b: &[Keypoint], k: usize, ratio: Option<f64>) -> Result<Vec<FeatureMatch>, MatchError> {
    if ratio.is_some() && k < 2 {
        return Err(MatchError::InvalidK(k));
    }
    let Some(first) = a.first().or(b.first()) else { return Ok(Vec::new()) };
    let dim = first.descriptor.len();
    if let Some(bad) = a.iter().chain(b).find(|kp| kp.descriptor.len() != dim) {
        return Err(MatchError::DimensionMismatch { expected: dim, got: bad.descriptor.len() });
    }

    let mut out = Vec::new();
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(b.len());
    for ka in a {
        dists.clear();
        dists.extend(b.iter().enumerate().map(|(j, kb)| (descriptor_distance(&ka.descriptor, &kb.descriptor), j)));
        let keep = k.max(1).min(dists.len());
        if keep == 0 {
            continue;
        }
        let cmp = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
        if keep < dists.len() {
            dists.select_nth_unstable_by(keep - 1, cmp);
        }
        dists[..keep].sort_by(cmp);

        let (d1, j) = dists[0];
        if let Some(r) = ratio {
            if dists.len() >= 2 && !(d1 / dists[1].0 < r) {
                continue;
            }
        }
        let kb = &b[j];
        out.push(FeatureMatch {
            frame: ka.frame,
            camera_a: ka.camera,
            camera_b: kb.camera,
            keypoint_a: ka.index,
            keypoint_b: kb.index,
            detection_a: ka.detection_index,
            detection_b: kb.detection_index,
            position_a: ka.position,
            position_b: kb.position,
            descriptor_distance: d1,
            landmark_a: None,
            landmark_b: None,
            verdict: Verdict::Pending,
        });
    }
    Ok(out)
}

/// Per-frame rejection percentages and their mean and population std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionStats {
    pub initial_matches: usize,
    pub kept_matches: usize,
    /// `(frame, rejected %)` for every frame with at least one candidate.
    pub per_frame_rejection_percent: Vec<(FrameIndex, f64)>,
    pub mean_rejection_percent: f64,
    pub std_rejection_percent: f64,
}

impl RejectionStats {
    pub fn from_matches(matches: &[FeatureMatch]) -> Self {
        let mut per_frame: BTreeMap<FrameIndex, (usize, usize)> = BTreeMap::new();
        for m in matches {
            let e = per_frame.entry(m.frame).or_default();
            e.0 += 1;
            if m.verdict == Verdict::Rejected {
                e.1 += 1;
            }
        }
        let per_frame_rejection_percent: Vec<(FrameIndex, f64)> = per_frame
            .into_iter()
            .map(|(f, (total, rejected))| (f, 100.0 * rejected as f64 / total as f64))
            .collect();
        let pct: Vec<f64> = per_frame_rejection_percent.iter().map(|p| p.1).collect();
        let (mean, std) = crate::linalg::mean_std(&pct).unwrap_or((0.0, 0.0));
        Self {
            initial_matches: matches.len(),
            kept_matches: matches.iter().filter(|m| m.is_kept()).count(),
            per_frame_rejection_percent,
            mean_rejection_percent: mean,
            std_rejection_percent: std,
        }
    }
}

/// Which pixel a match is anchored at for the nearest-landmark test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionAnchor {
    /// The matched keypoint positions.
    #[default]
    Keypoint,
    /// Centers of the detection boxes owning the keypoints.
    DetectionCenter,
}

/// Keeps a match iff both keypoints share their nearest landmark.
pub fn reject_by_landmark(
    matches: Vec<FeatureMatch>,
    landmarks: &LandmarkSet,
) -> Result<(Vec<FeatureMatch>, RejectionStats), MatchError> {
    reject_with(matches, landmarks, |m| Ok((m.position_a, m.position_b)))
}

/// Like [`reject_by_landmark`] but anchored at detection-box centers.
pub fn reject_by_detection_center(
    matches: Vec<FeatureMatch>,
    landmarks: &LandmarkSet,
    detections: &DetectionLookup,
) -> Result<(Vec<FeatureMatch>, RejectionStats), MatchError> {
    reject_with(matches, landmarks, |m| {
        Ok((
            detections.center(m.camera_a, m.frame, m.detection_a)?,
            detections.center(m.camera_b, m.frame, m.detection_b)?,
        ))
    })
}

fn reject_with(
    mut matches: Vec<FeatureMatch>,
    landmarks: &LandmarkSet,
    anchor: impl Fn(&FeatureMatch) -> Result<(Vector2<f64>, Vector2<f64>), MatchError>,
) -> Result<(Vec<FeatureMatch>, RejectionStats), MatchError> {
    for m in matches.iter_mut() {
        let (pa, pb) = anchor(m)?;
        let la = landmarks.nearest_landmark(m.camera_a, &pa)?;
        let lb = landmarks.nearest_landmark(m.camera_b, &pb)?;
        m.landmark_a = Some(la);
        m.landmark_b = Some(lb);
        m.verdict = if la == lb { Verdict::Kept } else { Verdict::Rejected };
    }
    let stats = RejectionStats::from_matches(&matches);
    Ok((matches, stats))
}

/// Detection boxes indexed by `(camera, frame, detection_index)`.
#[derive(Debug, Clone, Default)]
pub struct DetectionLookup {
    boxes: BTreeMap<(CameraId, FrameIndex, u32), BoundingBox>,
}

impl DetectionLookup {
    pub fn new<'a>(detections: impl IntoIterator<Item = &'a Detection>) -> Self {
        Self {
            boxes: detections
                .into_iter()
                .map(|d| ((d.camera, d.frame, d.detection_index), d.bbox))
                .collect(),
        }
    }

    pub fn get(&self, camera: CameraId, frame: FrameIndex, detection: u32) -> Option<&BoundingBox> {
        self.boxes.get(&(camera, frame, detection))
    }

    pub fn center(&self, camera: CameraId, frame: FrameIndex, detection: u32) -> Result<Vector2<f64>, MatchError> {
        self.get(camera, frame, detection)
            .map(BoundingBox::center)
            .ok_or(MatchError::MissingDetection { camera, frame, detection })
    }
}

/// Groups kept matches by detection pair and assigns detections one-to-one,
/// greedily by descending support, then ascending mean descriptor distance.
/// Groups with fewer than `min_support` matches are dropped.
pub fn cluster_correspondences(matches: &[FeatureMatch], min_support: usize) -> Vec<Correspondence> {
    let mut groups: BTreeMap<(FrameIndex, CameraId, CameraId, u32, u32), (usize, f64)> = BTreeMap::new();
    for m in matches.iter().filter(|m| m.is_kept()) {
        let e = groups.entry((m.frame, m.camera_a, m.camera_b, m.detection_a, m.detection_b)).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += m.descriptor_distance;
    }

    let mut candidates: Vec<Correspondence> = groups
        .into_iter()
        .filter(|(_, (support, _))| *support >= min_support.max(1))
        .map(|((frame, camera_a, camera_b, detection_a, detection_b), (support, sum))| Correspondence {
            frame,
            camera_a,
            camera_b,
            detection_a,
            detection_b,
            support,
            mean_descriptor_distance: sum / support as f64,
        })
        .collect();
    candidates.sort_by(|x, y| {
        (x.frame, x.camera_a, x.camera_b)
            .cmp(&(y.frame, y.camera_a, y.camera_b))
            .then(y.support.cmp(&x.support))
            .then(x.mean_descriptor_distance.total_cmp(&y.mean_descriptor_distance))
            .then((x.detection_a, x.detection_b).cmp(&(y.detection_a, y.detection_b)))
    });

    let mut used_a = std::collections::BTreeSet::new();
    let mut used_b = std::collections::BTreeSet::new();
    candidates
        .into_iter()
        .filter(|c| {
            let key_a = (c.frame, c.camera_a, c.camera_b, c.detection_a);
            let key_b = (c.frame, c.camera_a, c.camera_b, c.detection_b);
            if used_a.contains(&key_a) || used_b.contains(&key_b) {
                return false;
            }
            used_a.insert(key_a);
            used_b.insert(key_b);
            true
        })
        .collect()
}
