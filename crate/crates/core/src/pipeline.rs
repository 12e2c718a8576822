//! End-to-end orchestration: ingest, mask, match, reject, cluster,
//! reconstruct, track, evaluate and write every report.
//!
//! Per-frame stages run on a rayon pool of configurable size and are
//! collected in frame order; tracking then consumes frames sequentially.
//! Outputs are therefore independent of the thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::config::PipelineConfig;
use crate::io::{self, IoError, ObservationRow};
use crate::mask::{build_mask, gate_keypoints, BoundingBox};
use crate::matcher::{
    cluster_correspondences, knn_match, reject_by_detection_center, reject_by_landmark, Correspondence, Detection,
    DetectionLookup, FeatureMatch, Keypoint, RejectionAnchor, RejectionStats, Verdict,
};
use crate::metrics::{
    count_keypoints, keypoint_stats, rejection_stats, rejection_stats_by_pair, tracking_metrics, GroundTruth,
    KeypointStats, RejectionReport,
};
use crate::reconstruct::{reconstruct_frame, reconstruction_stats, FrameReconstruction, ReconstructionReport};
use crate::tracker::{TrackRecord, Tracker, TrackerConfig};
use crate::voronoi::LandmarkSet;
use crate::{CameraId, FrameIndex};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Mask,
    Match,
    Reconstruct,
    Track,
    Evaluate,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Mask => "mask",
            Stage::Match => "match",
            Stage::Reconstruct => "reconstruct",
            Stage::Track => "track",
            Stage::Evaluate => "evaluate",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
    pub path: Option<PathBuf>,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        Self { stage, message: message.into(), path: None }
    }

    pub fn io(stage: Stage, e: IoError) -> Self {
        Self { stage, path: Some(e.path().to_path_buf()), message: e.to_string() }
    }

    fn at(stage: Stage, path: &Path, line: usize, message: impl fmt::Display) -> Self {
        Self { stage, path: Some(path.to_path_buf()), message: format!("{}:{line}: {message}", path.display()) }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Validated inputs of one run.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub cameras: BTreeMap<CameraId, CameraModel>,
    pub landmarks: LandmarkSet,
    pub detections: Vec<Detection>,
    pub keypoints: Vec<Keypoint>,
}

pub fn load_cameras(config: &PipelineConfig) -> Result<BTreeMap<CameraId, CameraModel>> {
    let cams = io::read_calibration(&config.paths.calibration()).map_err(|e| PipelineError::io(Stage::Ingest, e))?;
    Ok(cams.into_iter().map(|c| (c.id(), c)).collect())
}

pub fn load_landmarks(config: &PipelineConfig, cameras: &BTreeMap<CameraId, CameraModel>) -> Result<LandmarkSet> {
    let path = config.paths.landmarks();
    let rows = io::read_landmarks(&path).map_err(|e| PipelineError::io(Stage::Ingest, e))?;
    let sizes = cameras.iter().map(|(&id, c)| (id, c.image_size())).collect();
    LandmarkSet::new(rows, sizes)
        .map_err(|e| PipelineError { stage: Stage::Ingest, path: Some(path.clone()), message: format!("{}: {e}", path.display()) })
}

pub fn load_detections(config: &PipelineConfig, cameras: &BTreeMap<CameraId, CameraModel>) -> Result<Vec<Detection>> {
    let path = config.paths.detections();
    let detections = io::read_detections(&path).map_err(|e| PipelineError::io(Stage::Ingest, e))?;
    let mut seen = std::collections::BTreeSet::new();
    for (i, d) in detections.iter().enumerate() {
        if !cameras.contains_key(&d.camera) {
            return Err(PipelineError::at(Stage::Ingest, &path, i + 2, format!("unknown camera {}", d.camera)));
        }
        if !seen.insert((d.camera, d.frame, d.detection_index)) {
            return Err(PipelineError::at(
                Stage::Ingest,
                &path,
                i + 2,
                format!("duplicate detection {} in camera {} frame {}", d.detection_index, d.camera, d.frame),
            ));
        }
    }
    Ok(detections)
}

pub fn load_inputs(config: &PipelineConfig) -> Result<Inputs> {
    let cameras = load_cameras(config)?;
    let landmarks = load_landmarks(config, &cameras)?;
    let detections = load_detections(config, &cameras)?;
    let lookup = DetectionLookup::new(&detections);
    let path = config.paths.keypoints();
    let keypoints = io::read_keypoints(&path).map_err(|e| PipelineError::io(Stage::Ingest, e))?;
    for (i, k) in keypoints.iter().enumerate() {
        let Some(bbox) = lookup.get(k.camera, k.frame, k.detection_index) else {
            return Err(PipelineError::at(
                Stage::Ingest,
                &path,
                i + 2,
                format!("keypoint refers to missing detection {} of camera {} frame {}", k.detection_index, k.camera, k.frame),
            ));
        };
        let tol = 1e-6;
        let inside = k.position.x >= bbox.x_min - tol
            && k.position.x <= bbox.x_max + tol
            && k.position.y >= bbox.y_min - tol
            && k.position.y <= bbox.y_max + tol;
        if !inside {
            return Err(PipelineError::at(Stage::Ingest, &path, i + 2, "keypoint lies outside its detection box"));
        }
    }
    Ok(Inputs { cameras, landmarks, detections, keypoints })
}

/// Configured camera pairs, or every pair of calibrated cameras.
pub fn camera_pairs(config: &PipelineConfig, cameras: &BTreeMap<CameraId, CameraModel>) -> Result<Vec<(CameraId, CameraId)>> {
    if config.matching.camera_pairs.is_empty() {
        let ids: Vec<CameraId> = cameras.keys().copied().collect();
        let mut pairs = Vec::new();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                pairs.push((a, b));
            }
        }
        return Ok(pairs);
    }
    for &(a, b) in &config.matching.camera_pairs {
        for c in [a, b] {
            if !cameras.contains_key(&c) {
                return Err(PipelineError::new(Stage::Config, format!("camera pair ({a}, {b}) names unknown camera {c}")));
            }
        }
    }
    Ok(config.matching.camera_pairs.clone())
}

/// Inclusive frame span covered by detections and keypoints.
pub fn frame_span(inputs: &Inputs) -> Option<(FrameIndex, FrameIndex)> {
    let frames = inputs.detections.iter().map(|d| d.frame).chain(inputs.keypoints.iter().map(|k| k.frame));
    frames.fold(None, |acc, f| match acc {
        None => Some((f, f)),
        Some((lo, hi)) => Some((lo.min(f), hi.max(f))),
    })
}

/// Per-frame results of the parallel stages.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub frame: FrameIndex,
    /// Keypoints that survived masking, per camera.
    pub keypoints: BTreeMap<CameraId, Vec<Keypoint>>,
    pub matches: Vec<FeatureMatch>,
    pub correspondences: Vec<Correspondence>,
    pub reconstruction: FrameReconstruction,
}

struct FrameContext<'a> {
    config: &'a PipelineConfig,
    inputs: &'a Inputs,
    lookup: DetectionLookup,
    pairs: Vec<(CameraId, CameraId)>,
    keypoints: BTreeMap<(FrameIndex, CameraId), Vec<Keypoint>>,
    boxes: BTreeMap<(FrameIndex, CameraId), Vec<BoundingBox>>,
}

fn process_frame(frame: FrameIndex, ctx: &FrameContext) -> Result<FrameOutput> {
    let config = ctx.config;
    let mut keypoints: BTreeMap<CameraId, Vec<Keypoint>> = BTreeMap::new();
    for &cam in ctx.inputs.cameras.keys() {
        let Some(all) = ctx.keypoints.get(&(frame, cam)) else { continue };
        let kept = if config.stages.mask {
            let path = config.paths.frames().join(io::frame_file_name(cam, frame));
            let image = io::read_pgm(&path).map_err(|e| PipelineError::io(Stage::Mask, e))?;
            let boxes = ctx.boxes.get(&(frame, cam)).map(Vec::as_slice).unwrap_or(&[]);
            let mask = build_mask(&image, boxes, config.mask.canny_low, config.mask.canny_high)
                .map_err(|e| PipelineError { stage: Stage::Mask, path: Some(path.clone()), message: format!("{}: {e}", path.display()) })?;
            gate_keypoints(&mask, all)
        } else {
            all.clone()
        };
        keypoints.insert(cam, kept);
    }

    let empty: Vec<Keypoint> = Vec::new();
    let mut matches = Vec::new();
    let mut correspondences = Vec::new();
    for &(a, b) in &ctx.pairs {
        let ka = keypoints.get(&a).unwrap_or(&empty);
        let kb = keypoints.get(&b).unwrap_or(&empty);
        let candidates = knn_match(ka, kb, config.matching.k, config.matching.ratio)
            .map_err(|e| PipelineError::new(Stage::Match, format!("frame {frame}, cameras {a}-{b}: {e}")))?;
        let verdicts = if !config.stages.rejection {
            candidates.into_iter().map(|m| FeatureMatch { verdict: Verdict::Kept, ..m }).collect()
        } else {
            let result = match config.stages.anchor {
                RejectionAnchor::Keypoint => reject_by_landmark(candidates, &ctx.inputs.landmarks),
                RejectionAnchor::DetectionCenter => {
                    reject_by_detection_center(candidates, &ctx.inputs.landmarks, &ctx.lookup)
                }
            };
            result.map_err(|e| PipelineError::new(Stage::Match, format!("frame {frame}, cameras {a}-{b}: {e}")))?.0
        };
        correspondences.extend(cluster_correspondences(&verdicts, config.matching.min_support));
        matches.extend(verdicts);
    }

    let reconstruction =
        reconstruct_frame(frame, &correspondences, &ctx.lookup, &ctx.inputs.cameras, &config.reconstruct_config());
    Ok(FrameOutput { frame, keypoints, matches, correspondences, reconstruction })
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::new(Stage::Config, format!("cannot start {threads} worker threads: {e}")))
}

/// Runs masking, matching, rejection, clustering and reconstruction for
/// every frame of `frames`, in parallel, returning results in frame order.
pub fn process_frames(inputs: &Inputs, config: &PipelineConfig, frames: &[FrameIndex]) -> Result<Vec<FrameOutput>> {
    let mut keypoints: BTreeMap<(FrameIndex, CameraId), Vec<Keypoint>> = BTreeMap::new();
    for k in &inputs.keypoints {
        keypoints.entry((k.frame, k.camera)).or_default().push(k.clone());
    }
    let mut boxes: BTreeMap<(FrameIndex, CameraId), Vec<BoundingBox>> = BTreeMap::new();
    for d in &inputs.detections {
        boxes.entry((d.frame, d.camera)).or_default().push(d.bbox);
    }
    let ctx = FrameContext {
        config,
        inputs,
        lookup: DetectionLookup::new(&inputs.detections),
        pairs: camera_pairs(config, &inputs.cameras)?,
        keypoints,
        boxes,
    };
    thread_pool(config.threads)?.install(|| frames.par_iter().map(|&f| process_frame(f, &ctx)).collect())
}

/// Tracker output over a run.
#[derive(Debug, Clone, Default)]
pub struct TrackingOutput {
    pub records: Vec<TrackRecord>,
    /// Observation rows with `track_hint` set to the assigned track id.
    pub observations: Vec<ObservationRow>,
    pub tracks_created: usize,
}

/// Feeds per-frame observations to a fresh tracker, in order.
pub fn track_observations(frames: &[(FrameIndex, Vec<ObservationRow>)], config: &TrackerConfig) -> Result<TrackingOutput> {
    let mut tracker = Tracker::new(*config);
    let mut out = TrackingOutput::default();
    for (frame, rows) in frames {
        let positions: Vec<Vector3<f64>> = rows.iter().map(|r| r.position).collect();
        let step = tracker
            .step(*frame, &positions)
            .map_err(|e| PipelineError::new(Stage::Track, format!("frame {frame}: {e}")))?;
        for (row, id) in rows.iter().zip(&step.observation_tracks) {
            out.observations.push(ObservationRow { track_hint: *id, ..*row });
        }
        out.records.extend(step.records);
    }
    out.tracks_created = tracker.all_tracks().len();
    Ok(out)
}

/// Groups observation rows by frame over a contiguous span so that frames
/// without observations still advance the tracker.
pub fn observations_by_frame(rows: &[ObservationRow], span: Option<(FrameIndex, FrameIndex)>) -> Vec<(FrameIndex, Vec<ObservationRow>)> {
    let mut by_frame: BTreeMap<FrameIndex, Vec<ObservationRow>> = BTreeMap::new();
    for r in rows {
        by_frame.entry(r.frame).or_default().push(*r);
    }
    let lo = span.map(|s| s.0).into_iter().chain(by_frame.keys().next().copied()).min();
    let hi = span.map(|s| s.1).into_iter().chain(by_frame.keys().next_back().copied()).max();
    match (lo, hi) {
        (Some(lo), Some(hi)) => (lo..=hi).map(|f| (f, by_frame.remove(&f).unwrap_or_default())).collect(),
        _ => Vec::new(),
    }
}

/// Rejection summary, with truth-based ratios when labels are available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionTable {
    #[serde(rename = "Avg feature match rejection %")]
    pub avg_rejection_percent: f64,
    #[serde(rename = "Std. Dev feature match rejection %")]
    pub std_rejection_percent: f64,
    #[serde(rename = "Ratio correct final matches / all initial matches")]
    pub correct_final_over_initial: Option<f64>,
    #[serde(rename = "Ratio correct final matches / all final matches")]
    pub correct_final_over_final: Option<f64>,
    pub initial_matches: usize,
    pub final_matches: usize,
    pub initial_precision: Option<f64>,
    pub per_frame_rejection_percent: Vec<(FrameIndex, f64)>,
    /// Keyed `"a-b"` by camera pair.
    pub per_pair: BTreeMap<String, RejectionReport>,
}

pub fn rejection_table(matches: &[FeatureMatch], truth: Option<&GroundTruth>) -> Result<RejectionTable> {
    let stats = RejectionStats::from_matches(matches);
    let mut table = RejectionTable {
        avg_rejection_percent: stats.mean_rejection_percent,
        std_rejection_percent: stats.std_rejection_percent,
        correct_final_over_initial: None,
        correct_final_over_final: None,
        initial_matches: stats.initial_matches,
        final_matches: stats.kept_matches,
        initial_precision: None,
        per_frame_rejection_percent: stats.per_frame_rejection_percent,
        per_pair: BTreeMap::new(),
    };
    if let (Some(truth), false) = (truth, matches.is_empty()) {
        let err = |e: crate::metrics::MetricsError| PipelineError::new(Stage::Evaluate, e.to_string());
        let r = rejection_stats(matches, truth).map_err(err)?;
        table.correct_final_over_initial = Some(r.correct_final_over_initial);
        table.correct_final_over_final = Some(r.correct_final_over_final);
        table.initial_precision = Some(r.initial_precision);
        table.per_pair = rejection_stats_by_pair(matches, truth)
            .map_err(err)?
            .into_iter()
            .map(|((a, b), r)| (format!("{a}-{b}"), r))
            .collect();
    }
    Ok(table)
}

/// The metrics document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub table2: Vec<KeypointStats>,
    pub table3: RejectionTable,
    pub table4: Option<ReconstructionReport>,
    pub table5: Option<Value>,
}

/// Tracking record under its table labels plus per-camera reprojection means.
pub fn tracking_table(
    records: &[TrackRecord],
    truth: &GroundTruth,
    config: &PipelineConfig,
    per_camera_error: Option<&BTreeMap<CameraId, f64>>,
) -> Value {
    let mut mc = config.metrics.clone();
    mc.fps = config.tracker.fps;
    let r = tracking_metrics(records, truth, &mc);
    let mut map = Map::new();
    if let Some(per_camera) = per_camera_error {
        for (cam, e) in per_camera {
            map.insert(format!("Mean Reprojection Error (Camera {cam})"), json!(e));
        }
    }
    map.insert("Total ID Switches".into(), json!(r.id_switches));
    map.insert("ID Switches per Minute".into(), json!(r.id_switches_per_minute));
    for (label, pct) in r.persistence_labels() {
        map.insert(label, json!(pct));
    }
    map.insert("identities".into(), json!(r.identities));
    map.insert("duration_s".into(), json!(r.duration_s));
    map.insert("missed".into(), json!(r.missed));
    Value::Object(map)
}

pub fn load_truth(config: &PipelineConfig) -> Result<Option<GroundTruth>> {
    let truth_path = config.paths.truth();
    let labels_path = config.paths.match_truth();
    if !truth_path.exists() && !labels_path.exists() {
        return Ok(None);
    }
    let mut truth = GroundTruth::default();
    if truth_path.exists() {
        for t in io::read_truth(&truth_path).map_err(|e| PipelineError::io(Stage::Evaluate, e))? {
            truth.positions.entry(t.frame).or_default().push((t.identity, t.position));
        }
        for v in truth.positions.values_mut() {
            v.sort_by_key(|(id, _)| *id);
        }
    }
    if labels_path.exists() {
        truth.keypoint_identity =
            io::read_match_truth(&labels_path).map_err(|e| PipelineError::io(Stage::Evaluate, e))?;
    }
    Ok(Some(truth))
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Three orthographic views (top x-y, front x-z, side y-z) of every track.
pub fn render_trajectories(records: &[TrackRecord]) -> String {
    let mut tracks: BTreeMap<u64, Vec<Vector3<f64>>> = BTreeMap::new();
    for r in records {
        tracks.entry(r.track_id).or_default().push(r.position);
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in tracks.values().flatten() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if tracks.is_empty() {
        lo = Vector3::zeros();
        hi = Vector3::repeat(1.0);
    }
    let span = (hi - lo).max().max(1e-6);

    let (size, margin) = (360.0, 40.0);
    let panels = [("top", 0usize, 1usize), ("front", 0, 2), ("side", 1, 2)];
    let axis = ["x", "y", "z"];
    let width = panels.len() as f64 * (size + margin) + margin;
    let height = size + 2.0 * margin;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"  <rect width="{width}" height="{height}" fill="white"/>"#);
    for (i, (name, u, v)) in panels.iter().enumerate() {
        let ox = margin + i as f64 * (size + margin);
        let _ = writeln!(svg, r#"  <g class="panel" data-view="{name}">"#);
        let _ = writeln!(
            svg,
            r#"    <rect x="{ox}" y="{margin}" width="{size}" height="{size}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"    <text x="{}" y="{}" font-size="14">{name} ({}, {})</text>"#,
            ox,
            margin - 10.0,
            axis[*u],
            axis[*v]
        );
        for (id, pts) in &tracks {
            let coords: Vec<String> = pts
                .iter()
                .map(|p| {
                    let x = ox + (p[*u] - lo[*u]) / span * size;
                    let y = margin + size - (p[*v] - lo[*v]) / span * size;
                    format!("{x:.1},{y:.1}")
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"    <polyline class="track" data-id="{id}" points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                coords.join(" "),
                PALETTE[(*id as usize) % PALETTE.len()]
            );
        }
        svg.push_str("  </g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes one Voronoi overlay per camera that has landmarks.
pub fn write_voronoi_overlays(landmarks: &LandmarkSet, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for cam in landmarks.cameras() {
        let diagram = landmarks
            .build_bounded_diagram(cam)
            .map_err(|e| PipelineError::new(Stage::Output, format!("camera {cam}: {e}")))?;
        let path = out_dir.join(format!("voronoi_cam{cam}.svg"));
        io::write_text(&path, &diagram.render_overlay()).map_err(|e| PipelineError::io(Stage::Output, e))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RunMode {
    #[default]
    Full,
    /// Only the landmark cell overlays.
    VoronoiOverlay,
}

/// What a run produced.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub frames: usize,
    pub matches: usize,
    pub kept_matches: usize,
    pub correspondences: usize,
    pub observations: usize,
    pub skipped_correspondences: usize,
    pub tracks: usize,
    pub outputs: Vec<PathBuf>,
    pub metrics: Option<MetricsReport>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError {
        stage: Stage::Output,
        path: Some(dir.to_path_buf()),
        message: format!("{}: {e}", dir.display()),
    })
}

/// Observation rows of one frame, hinted by their index within the frame.
pub fn observation_rows(rec: &FrameReconstruction) -> Vec<ObservationRow> {
    rec.observations
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let (err_a, err_b) = o.primary_errors();
            ObservationRow { frame: o.frame, track_hint: i as u64, position: o.position, err_cam_a_px: err_a, err_cam_b_px: err_b }
        })
        .collect()
}

pub fn run_pipeline(config: &PipelineConfig, mode: RunMode) -> Result<RunSummary> {
    config.validate().map_err(|e| PipelineError::new(Stage::Config, e.to_string()))?;
    let out_dir = config.paths.output_dir();

    if mode == RunMode::VoronoiOverlay {
        let cameras = load_cameras(config)?;
        let landmarks = load_landmarks(config, &cameras)?;
        create_dir(&out_dir)?;
        let outputs = write_voronoi_overlays(&landmarks, &out_dir)?;
        return Ok(RunSummary { outputs, ..Default::default() });
    }

    let inputs = load_inputs(config)?;
    let truth = load_truth(config)?;
    let span = frame_span(&inputs);
    let frames: Vec<FrameIndex> = span.map(|(lo, hi)| (lo..=hi).collect()).unwrap_or_default();
    let per_frame = process_frames(&inputs, config, &frames)?;

    let mut matches = Vec::new();
    let mut correspondences = Vec::new();
    let mut observations3d = Vec::new();
    let mut rows = Vec::new();
    let mut skipped = 0;
    let mut used_keypoints = Vec::new();
    for f in &per_frame {
        matches.extend(f.matches.iter().cloned());
        correspondences.extend(f.correspondences.iter().cloned());
        rows.extend(observation_rows(&f.reconstruction));
        observations3d.extend(f.reconstruction.observations.iter().cloned());
        skipped += f.reconstruction.skipped.len();
        used_keypoints.extend(f.keypoints.values().flatten().cloned());
    }

    let tracking = track_observations(&observations_by_frame(&rows, span), &config.tracker)?;

    let camera_ids: Vec<CameraId> = inputs.cameras.keys().copied().collect();
    let table2 = match span {
        Some((lo, hi)) => keypoint_stats(&count_keypoints(&used_keypoints, &camera_ids, lo..hi + 1))
            .map_err(|e| PipelineError::new(Stage::Evaluate, e.to_string()))?,
        None => Vec::new(),
    };
    let table3 = rejection_table(&matches, truth.as_ref().filter(|t| !t.keypoint_identity.is_empty()))?;
    let kept: Vec<FeatureMatch> = matches.iter().filter(|m| m.is_kept()).cloned().collect();
    let table4 = reconstruction_stats(&observations3d, &kept, &inputs.cameras).ok();
    let table5 = truth.as_ref().filter(|t| !t.positions.is_empty()).map(|t| {
        tracking_table(&tracking.records, t, config, table4.as_ref().map(|r| &r.mean_error_per_camera_px))
    });
    let metrics = MetricsReport { schema_version: SCHEMA_VERSION, table2, table3, table4, table5 };

    create_dir(&out_dir)?;
    let out = |name: &str| out_dir.join(name);
    let w = |e| PipelineError::io(Stage::Output, e);
    io::write_tracks(&out("tracks.csv"), &tracking.records).map_err(w)?;
    io::write_observations(&out("observations.csv"), &tracking.observations).map_err(w)?;
    io::write_matches(&out("matches.csv"), &matches).map_err(w)?;
    io::write_correspondences(&out("correspondences.csv"), &correspondences).map_err(w)?;
    io::write_json(&out("metrics.json"), &metrics).map_err(w)?;
    io::write_text(&out("trajectories.svg"), &render_trajectories(&tracking.records)).map_err(w)?;
    let mut outputs: Vec<PathBuf> =
        ["tracks.csv", "observations.csv", "matches.csv", "correspondences.csv", "metrics.json", "trajectories.svg"]
            .iter()
            .map(|n| out(n))
            .collect();
    outputs.extend(write_voronoi_overlays(&inputs.landmarks, &out_dir)?);

    Ok(RunSummary {
        frames: frames.len(),
        matches: matches.len(),
        kept_matches: kept.len(),
        correspondences: correspondences.len(),
        observations: rows.len(),
        skipped_correspondences: skipped,
        tracks: tracking.tracks_created,
        outputs,
        metrics: Some(metrics),
    })
}
