//! Evaluation against ground truth: keypoint counts, outlier-rejection
//! quality and tracking consistency.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::mean_std;
use crate::matcher::{FeatureMatch, Keypoint, RejectionStats, Verdict};
use crate::tracker::{associate_distances, TrackRecord};
use crate::{CameraId, FrameIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no data to aggregate")]
    EmptyInput,
    #[error("no truth label for keypoint {keypoint} of camera {camera} in frame {frame}")]
    MissingLabels { camera: CameraId, frame: FrameIndex, keypoint: u32 },
}

/// Identity of a keypoint: `(camera, frame, keypoint index)`.
pub type KeypointKey = (CameraId, FrameIndex, u32);

/// True bird positions and keypoint ownership.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    /// Per frame, `(identity, position)` sorted by identity.
    pub positions: BTreeMap<FrameIndex, Vec<(u32, Vector3<f64>)>>,
    pub keypoint_identity: BTreeMap<KeypointKey, u32>,
}

impl GroundTruth {
    pub fn identity(&self, camera: CameraId, frame: FrameIndex, keypoint: u32) -> Option<u32> {
        self.keypoint_identity.get(&(camera, frame, keypoint)).copied()
    }

    /// Whether both keypoints of `m` belong to the same bird.
    pub fn is_correct(&self, m: &FeatureMatch) -> Result<bool, MetricsError> {
        let a = self.identity(m.camera_a, m.frame, m.keypoint_a).ok_or(MetricsError::MissingLabels {
            camera: m.camera_a,
            frame: m.frame,
            keypoint: m.keypoint_a,
        })?;
        let b = self.identity(m.camera_b, m.frame, m.keypoint_b).ok_or(MetricsError::MissingLabels {
            camera: m.camera_b,
            frame: m.frame,
            keypoint: m.keypoint_b,
        })?;
        Ok(a == b)
    }

    pub fn identities(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.positions.values().flatten().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Per-camera keypoint count summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointStats {
    pub camera: CameraId,
    pub frames: usize,
    pub min: usize,
    pub max: usize,
    pub avg: f64,
    pub std: f64,
}

/// Counts keypoints per frame for each camera over `frames`, including
/// frames with none.
pub fn count_keypoints<'a>(
    keypoints: impl IntoIterator<Item = &'a Keypoint>,
    cameras: &[CameraId],
    frames: std::ops::Range<FrameIndex>,
) -> BTreeMap<CameraId, Vec<usize>> {
    let n = frames.len();
    let mut out: BTreeMap<CameraId, Vec<usize>> = cameras.iter().map(|&c| (c, vec![0; n])).collect();
    for k in keypoints {
        if !frames.contains(&k.frame) {
            continue;
        }
        if let Some(counts) = out.get_mut(&k.camera) {
            counts[(k.frame - frames.start) as usize] += 1;
        }
    }
    out
}

/// Min, max and mean ± population std of per-frame counts, per camera.
pub fn keypoint_stats(counts: &BTreeMap<CameraId, Vec<usize>>) -> Result<Vec<KeypointStats>, MetricsError> {
    if counts.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    counts
        .iter()
        .map(|(&camera, c)| {
            let values: Vec<f64> = c.iter().map(|&v| v as f64).collect();
            let (avg, std) = mean_std(&values).ok_or(MetricsError::EmptyInput)?;
            Ok(KeypointStats {
                camera,
                frames: c.len(),
                min: *c.iter().min().unwrap_or(&0),
                max: *c.iter().max().unwrap_or(&0),
                avg,
                std,
            })
        })
        .collect()
}

/// Outlier-rejection quality record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    #[serde(rename = "Avg feature match rejection %")]
    pub avg_rejection_percent: f64,
    #[serde(rename = "Std. Dev feature match rejection %")]
    pub std_rejection_percent: f64,
    #[serde(rename = "Ratio correct final matches / all initial matches")]
    pub correct_final_over_initial: f64,
    #[serde(rename = "Ratio correct final matches / all final matches")]
    pub correct_final_over_final: f64,
    pub initial_matches: usize,
    pub final_matches: usize,
    pub correct_initial_matches: usize,
    pub correct_final_matches: usize,
    /// Share of correct matches before rejection.
    pub initial_precision: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores verdicts against truth labels. Ratios with an empty denominator
/// are reported as 0.
pub fn rejection_stats(matches: &[FeatureMatch], truth: &GroundTruth) -> Result<RejectionReport, MetricsError> {
    if matches.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let stats = RejectionStats::from_matches(matches);
    let mut correct_initial = 0;
    let mut correct_final = 0;
    for m in matches {
        if truth.is_correct(m)? {
            correct_initial += 1;
            if m.verdict == Verdict::Kept {
                correct_final += 1;
            }
        }
    }
    Ok(RejectionReport {
        avg_rejection_percent: stats.mean_rejection_percent,
        std_rejection_percent: stats.std_rejection_percent,
        correct_final_over_initial: ratio(correct_final, stats.initial_matches),
        correct_final_over_final: ratio(correct_final, stats.kept_matches),
        initial_matches: stats.initial_matches,
        final_matches: stats.kept_matches,
        correct_initial_matches: correct_initial,
        correct_final_matches: correct_final,
        initial_precision: ratio(correct_initial, stats.initial_matches),
    })
}

/// [`rejection_stats`] split by camera pair.
pub fn rejection_stats_by_pair(
    matches: &[FeatureMatch],
    truth: &GroundTruth,
) -> Result<BTreeMap<(CameraId, CameraId), RejectionReport>, MetricsError> {
    let mut groups: BTreeMap<(CameraId, CameraId), Vec<FeatureMatch>> = BTreeMap::new();
    for m in matches {
        groups.entry((m.camera_a, m.camera_b)).or_default().push(m.clone());
    }
    groups.into_iter().map(|(k, v)| Ok((k, rejection_stats(&v, truth)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingMetricsConfig {
    /// Truth-to-track matching gate, m.
    pub gate: f64,
    pub fps: f64,
    pub horizons_s: Vec<f64>,
    /// Unmatched frames tolerated inside one continuous track run.
    pub gap_tolerance_frames: u32,
}

impl Default for TrackingMetricsConfig {
    fn default() -> Self {
        Self { gate: 0.5, fps: 30.0, horizons_s: vec![10.0, 30.0, 60.0], gap_tolerance_frames: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Persistence {
    pub horizon_s: f64,
    pub percent: f64,
}

/// Tracking consistency record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    #[serde(rename = "Total ID Switches")]
    pub id_switches: usize,
    #[serde(rename = "ID Switches per Minute")]
    pub id_switches_per_minute: f64,
    pub duration_s: f64,
    pub identities: usize,
    /// Frames in which a truth identity had no gated track.
    pub missed: usize,
    pub persistence: Vec<Persistence>,
    /// Longest single-id run per identity, s.
    pub longest_run_s: BTreeMap<u32, f64>,
}

impl TrackingReport {
    /// The persistence rows under their table labels.
    pub fn persistence_labels(&self) -> Vec<(String, f64)> {
        self.persistence
            .iter()
            .map(|p| (format!("Birds Tracked Over {}s (%)", p.horizon_s), p.percent))
            .collect()
    }
}

/// Per-identity matched track id sequence, one entry per truth frame
/// (`None` where no track fell inside the gate).
pub fn truth_track_assignments(
    tracks: &[TrackRecord],
    truth: &GroundTruth,
    gate: f64,
) -> BTreeMap<u32, Vec<(FrameIndex, Option<u64>)>> {
    let mut by_frame: BTreeMap<FrameIndex, Vec<&TrackRecord>> = BTreeMap::new();
    for t in tracks {
        by_frame.entry(t.frame).or_default().push(t);
    }
    let mut out: BTreeMap<u32, Vec<(FrameIndex, Option<u64>)>> = BTreeMap::new();
    for (&frame, birds) in &truth.positions {
        let live = by_frame.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        let distances: Vec<Vec<f64>> =
            birds.iter().map(|(_, p)| live.iter().map(|t| (t.position - p).norm()).collect()).collect();
        let assoc = associate_distances(&distances, live.len(), gate);
        let mut matched: Vec<Option<u64>> = vec![None; birds.len()];
        for (bi, ti) in assoc.pairs {
            matched[bi] = Some(live[ti].track_id);
        }
        for ((id, _), m) in birds.iter().zip(matched) {
            out.entry(*id).or_default().push((frame, m));
        }
    }
    out
}

/// ID switches and persistence of truth identities under gated
/// nearest-neighbor truth-to-track matching.
pub fn tracking_metrics(
    tracks: &[TrackRecord],
    truth: &GroundTruth,
    config: &TrackingMetricsConfig,
) -> TrackingReport {
    let assignments = truth_track_assignments(tracks, truth, config.gate);
    let mut id_switches = 0;
    let mut missed = 0;
    let mut longest_run_s = BTreeMap::new();
    for (&identity, seq) in &assignments {
        let mut previous: Option<u64> = None;
        // (track id, first frame, last matched frame)
        let mut run: Option<(u64, FrameIndex, FrameIndex)> = None;
        let mut best = 0u32;
        for &(frame, m) in seq {
            let Some(tid) = m else {
                missed += 1;
                continue;
            };
            if previous.is_some_and(|p| p != tid) {
                id_switches += 1;
            }
            previous = Some(tid);
            run = match run {
                Some((rid, start, last)) if rid == tid && frame - last <= config.gap_tolerance_frames + 1 => {
                    Some((rid, start, frame))
                }
                _ => Some((tid, frame, frame)),
            };
            if let Some((_, start, last)) = run {
                best = best.max(last - start + 1);
            }
        }
        longest_run_s.insert(identity, best as f64 / config.fps);
    }

    let identities = assignments.len();
    let persistence = config
        .horizons_s
        .iter()
        .map(|&h| {
            let held = longest_run_s.values().filter(|&&r| r + 1e-9 >= h).count();
            Persistence { horizon_s: h, percent: 100.0 * ratio(held, identities) }
        })
        .collect();

    let duration_s = match (truth.positions.keys().next(), truth.positions.keys().next_back()) {
        (Some(&a), Some(&b)) => (b - a + 1) as f64 / config.fps,
        _ => 0.0,
    };
    let id_switches_per_minute = if duration_s > 0.0 { id_switches as f64 * 60.0 / duration_s } else { 0.0 };

    TrackingReport {
        id_switches,
        id_switches_per_minute,
        duration_s,
        identities,
        missed,
        persistence,
        longest_run_s,
    }
}
