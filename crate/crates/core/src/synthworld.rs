//! Synthetic aviary scenes with exact ground truth.
//!
//! Birds fly piecewise constant-acceleration paths inside a box observed by a
//! calibrated camera rig. Every frame yields detection boxes, keypoints with
//! descriptors, and labels tying each of them back to a bird identity.
//!
//! Generation is a pure function of [`SceneConfig`]; all randomness comes from
//! ChaCha streams derived from the seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::camera::{CameraError, CameraModel, Distortion, Intrinsics};
use crate::mask::{BoundingBox, GrayFrame};
use crate::matcher::{Detection, Keypoint};
use crate::metrics::GroundTruth;
use crate::voronoi::{Landmark, LandmarkSet, VoronoiError};
use crate::{CameraId, FrameIndex};

/// Per-dimension standard deviation of base descriptors.
pub const BASE_DESCRIPTOR_SIGMA: f64 = 0.2;

/// Nearest depth at which a bird is still rendered, m.
const MIN_DEPTH: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene configuration: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Landmarks(#[from] VoronoiError),
}

/// Camera placement by position and look-at target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub id: CameraId,
    pub position: [f64; 3],
    pub target: [f64; 3],
    pub focal_px: f64,
    pub image_size: (u32, u32),
    #[serde(default)]
    pub distortion: [f64; 5],
}

impl CameraSpec {
    /// Rotation whose rows are the camera right, down and forward axes in
    /// world coordinates, with world z pointing up.
    pub fn look_at_rotation(&self) -> Result<Matrix3<f64>, SynthError> {
        let c = Vector3::from(self.position);
        let f = Vector3::from(self.target) - c;
        let up = Vector3::z();
        let right = f.cross(&up);
        if f.norm() < 1e-9 || right.norm() < 1e-9 * f.norm() {
            return Err(SynthError::ConfigInvalid(format!("camera {} looks straight up or down", self.id)));
        }
        let f = f.normalize();
        let r = right.normalize();
        let d = f.cross(&r);
        Ok(Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]))
    }

    pub fn model(&self) -> Result<CameraModel, SynthError> {
        let rotation = self.look_at_rotation()?;
        let rvec = Rotation3::from_matrix_unchecked(rotation).scaled_axis();
        let rotation = Rotation3::from_scaled_axis(rvec).into_inner();
        let tvec = -(rotation * Vector3::from(self.position));
        let (w, h) = self.image_size;
        let intrinsics = Intrinsics { fx: self.focal_px, fy: self.focal_px, cx: w as f64 / 2.0, cy: h as f64 / 2.0 };
        let d = self.distortion;
        let dist = Distortion { k1: d[0], k2: d[1], p1: d[2], p2: d[3], k3: d[4] };
        Ok(CameraModel::from_rvec(self.id, intrinsics, dist, rvec, tvec, self.image_size)?)
    }
}

/// Axis-aligned region a bird is confined to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Territory {
    pub center: [f64; 3],
    pub half_extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Aviary box size along x, y, z (z up), m. The box starts at the origin.
    pub aviary: [f64; 3],
    pub cameras: Vec<CameraSpec>,
    pub birds: usize,
    pub landmarks: Vec<[f64; 3]>,
    pub fps: f64,
    pub duration_s: f64,
    pub pixel_sigma: f64,
    pub descriptor_sigma: f64,
    /// Probability that a bird reuses an earlier bird's descriptors.
    pub ambiguity: f64,
    pub seed: u64,
    pub descriptor_len: usize,
    pub keypoints_per_detection: (usize, usize),
    /// Trackable surface points per bird.
    pub feature_points: usize,
    pub feature_radius: f64,
    pub body_radius: f64,
    pub max_speed: f64,
    /// Per-axis standard deviation of segment accelerations, m/s².
    pub accel_sigma: f64,
    pub segment_s: (f64, f64),
    /// Per-frame probability of an acceleration kick.
    pub jerk_burst_rate: f64,
    pub jerk_burst_sigma: f64,
    /// Drop probability per unit of box overlap with a nearer bird.
    pub occlusion_scale: f64,
    pub territories: Option<Vec<Territory>>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            aviary: [3.4, 2.5, 3.2],
            cameras: default_rig(),
            birds: 5,
            landmarks: default_landmarks(),
            fps: 30.0,
            duration_s: 10.0,
            pixel_sigma: 0.5,
            descriptor_sigma: 0.05,
            ambiguity: 0.0,
            seed: 0,
            descriptor_len: 128,
            keypoints_per_detection: (5, 15),
            feature_points: 20,
            feature_radius: 0.1,
            body_radius: 0.15,
            max_speed: 3.0,
            accel_sigma: 1.5,
            segment_s: (0.5, 2.0),
            jerk_burst_rate: 0.0,
            jerk_burst_sigma: 0.0,
            occlusion_scale: 1.0,
            territories: None,
        }
    }
}

/// Five 1920×1080 cameras mounted outside the mesh: four above the roof
/// corners and one facing a long side, all aimed at the aviary center.
pub fn default_rig() -> Vec<CameraSpec> {
    let target = [1.7, 1.25, 1.4];
    let positions = [[-0.3, -0.3, 3.5], [3.7, -0.3, 3.5], [3.7, 2.8, 3.5], [-0.3, 2.8, 3.5], [1.7, -1.2, 1.8]];
    positions
        .iter()
        .enumerate()
        .map(|(i, &position)| CameraSpec {
            id: i as CameraId + 1,
            position,
            target,
            focal_px: 900.0,
            image_size: (1920, 1080),
            distortion: [0.0; 5],
        })
        .collect()
}

/// Six perches spread through the aviary volume.
pub fn default_landmarks() -> Vec<[f64; 3]> {
    vec![[1.1, 2.0, 1.3], [1.9, 0.6, 0.8], [1.1, 1.3, 0.6], [2.9, 0.6, 0.8], [2.5, 2.0, 0.8], [2.1, 1.4, 2.6]]
}

impl SceneConfig {
    pub fn frame_count(&self) -> u32 {
        (self.duration_s * self.fps).round() as u32
    }

    /// Confines bird `i` to a cube around landmark `i`.
    pub fn with_territories(mut self, half_extent: f64) -> Self {
        self.territories = Some(
            self.landmarks.iter().take(self.birds).map(|&center| Territory { center, half_extent }).collect(),
        );
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::ConfigInvalid(m));
        if self.aviary.iter().any(|&a| !(a > 2.0 * self.body_radius && a.is_finite())) {
            return bad(format!("aviary {:?} must exceed the bird diameter", self.aviary));
        }
        if self.cameras.is_empty() {
            return bad("at least one camera is required".into());
        }
        let mut ids: Vec<CameraId> = self.cameras.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.cameras.len() {
            return bad("camera ids must be unique".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) || !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("fps and duration must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return bad(format!("ambiguity {} outside [0, 1]", self.ambiguity));
        }
        for (name, v) in [
            ("pixel_sigma", self.pixel_sigma),
            ("descriptor_sigma", self.descriptor_sigma),
            ("accel_sigma", self.accel_sigma),
            ("jerk_burst_sigma", self.jerk_burst_sigma),
            ("occlusion_scale", self.occlusion_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.jerk_burst_rate) {
            return bad("jerk_burst_rate must be a probability".into());
        }
        if !(self.max_speed > 0.0) || !(self.body_radius > 0.0) || !(self.feature_radius >= 0.0) {
            return bad("max_speed and body_radius must be positive".into());
        }
        if self.feature_radius >= self.body_radius {
            return bad("feature points must lie inside the body radius".into());
        }
        let (kmin, kmax) = self.keypoints_per_detection;
        if kmin == 0 || kmin > kmax || kmax > self.feature_points {
            return bad(format!("keypoints per detection {kmin}..={kmax} invalid for {} feature points", self.feature_points));
        }
        let (smin, smax) = self.segment_s;
        if !(smin > 0.0 && smin <= smax) {
            return bad("segment duration range invalid".into());
        }
        if self.descriptor_len == 0 {
            return bad("descriptor length must be positive".into());
        }
        for l in &self.landmarks {
            if !self.inside_box(&Vector3::from(*l), 0.0) {
                return bad(format!("landmark {l:?} outside the aviary"));
            }
        }
        if let Some(t) = &self.territories {
            if t.len() < self.birds {
                return bad(format!("{} territories for {} birds", t.len(), self.birds));
            }
            for terr in t {
                if !(terr.half_extent > 0.0) {
                    return bad("territory half extent must be positive".into());
                }
                let (lo, hi) = self.territory_bounds(terr);
                if (0..3).any(|i| lo[i] > hi[i]) {
                    return bad(format!("territory at {:?} leaves no room inside the aviary", terr.center));
                }
            }
        }
        let center = Vector3::from(self.aviary) * 0.5;
        for spec in &self.cameras {
            let cam = spec.model()?;
            match cam.project(&center) {
                Ok(p) if cam.contains_pixel(&p) => {}
                _ => return bad(format!("camera {} does not view the aviary", spec.id)),
            }
        }
        Ok(())
    }

    fn inside_box(&self, p: &Vector3<f64>, margin: f64) -> bool {
        (0..3).all(|i| p[i] >= margin && p[i] <= self.aviary[i] - margin)
    }

    fn territory_bounds(&self, t: &Territory) -> ([f64; 3], [f64; 3]) {
        let r = self.body_radius;
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for i in 0..3 {
            lo[i] = (t.center[i] - t.half_extent).max(r);
            hi[i] = (t.center[i] + t.half_extent).min(self.aviary[i] - r);
        }
        (lo, hi)
    }

    fn bird_bounds(&self, bird: usize) -> ([f64; 3], [f64; 3]) {
        match &self.territories {
            Some(t) => self.territory_bounds(&t[bird]),
            None => {
                let r = self.body_radius;
                ([r; 3], [self.aviary[0] - r, self.aviary[1] - r, self.aviary[2] - r])
            }
        }
    }
}

/// One true bird position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRow {
    pub frame: FrameIndex,
    pub identity: u32,
    pub position: Vector3<f64>,
}

/// Everything the pipeline consumes plus the labels to score it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SceneConfig,
    pub cameras: Vec<CameraModel>,
    pub landmarks: Vec<Landmark>,
    pub detections: Vec<Detection>,
    pub keypoints: Vec<Keypoint>,
    pub truth: Vec<TruthRow>,
    /// `(camera, frame, detection index)` to bird identity.
    pub detection_identity: BTreeMap<(CameraId, FrameIndex, u32), u32>,
    /// `(camera, frame, keypoint index)` to bird identity.
    pub keypoint_identity: BTreeMap<(CameraId, FrameIndex, u32), u32>,
    /// Keypoints emitted per `(camera, frame, identity)`, counted at emission.
    pub keypoint_tally: BTreeMap<(CameraId, FrameIndex, u32), usize>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize, sigma: f64) -> Vec<f64> {
    (0..len).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn uniform_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

/// Per-bird trajectories, `positions[bird][frame]`.
fn simulate_flight(config: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<Vector3<f64>>> {
    let frames = config.frame_count() as usize;
    let dt = 1.0 / config.fps;
    let (smin, smax) = config.segment_s;
    let accel = Normal::new(0.0, config.accel_sigma).expect("validated sigma");
    let kick = Normal::new(0.0, config.jerk_burst_sigma).expect("validated sigma");
    (0..config.birds)
        .map(|bird| {
            let (lo, hi) = config.bird_bounds(bird);
            let mut p = Vector3::from_fn(|i, _| rng.random_range(lo[i]..=hi[i]));
            let mut v = Vector3::zeros();
            let mut a = Vector3::zeros();
            let mut remaining = 0.0;
            let mut path = Vec::with_capacity(frames);
            for _ in 0..frames {
                path.push(p);
                if remaining <= 0.0 {
                    a = Vector3::from_fn(|_, _| accel.sample(rng));
                    remaining = rng.random_range(smin..=smax);
                }
                let mut a_step = a;
                if config.jerk_burst_rate > 0.0 && rng.random_bool(config.jerk_burst_rate) {
                    a_step += Vector3::from_fn(|_, _| kick.sample(rng));
                }
                p += v * dt + a_step * (0.5 * dt * dt);
                v += a_step * dt;
                remaining -= dt;
                for i in 0..3 {
                    if p[i] < lo[i] {
                        p[i] = (2.0 * lo[i] - p[i]).min(hi[i]);
                        v[i] = v[i].abs();
                        a[i] = a[i].abs();
                    } else if p[i] > hi[i] {
                        p[i] = (2.0 * hi[i] - p[i]).max(lo[i]);
                        v[i] = -v[i].abs();
                        a[i] = -a[i].abs();
                    }
                }
                let speed = v.norm();
                if speed > config.max_speed {
                    v *= config.max_speed / speed;
                }
            }
            path
        })
        .collect()
}

struct Candidate {
    bird: usize,
    depth: f64,
    bbox: BoundingBox,
}

/// Generates a full dataset.
pub fn generate(config: &SceneConfig) -> Result<Dataset, SynthError> {
    config.validate()?;
    let cameras: Vec<CameraModel> = config.cameras.iter().map(CameraSpec::model).collect::<Result<_, _>>()?;

    let mut landmarks = Vec::new();
    for cam in &cameras {
        for (gid, l) in config.landmarks.iter().enumerate() {
            if let Ok(px) = cam.project(&Vector3::from(*l)) {
                if cam.contains_pixel(&px) {
                    landmarks.push(Landmark { camera: cam.id(), global_id: gid as u32 + 1, position: px });
                }
            }
        }
    }

    let mut appearance = stream(config.seed, 1);
    let mut descriptors: Vec<Vec<Vec<f64>>> = Vec::with_capacity(config.birds);
    for bird in 0..config.birds {
        if bird > 0 && appearance.random_bool(config.ambiguity) {
            let source = appearance.random_range(0..bird);
            descriptors.push(descriptors[source].clone());
        } else {
            descriptors.push(
                (0..config.feature_points)
                    .map(|_| gaussian_vec(&mut appearance, config.descriptor_len, BASE_DESCRIPTOR_SIGMA))
                    .collect(),
            );
        }
    }
    let offsets: Vec<Vec<Vector3<f64>>> = (0..config.birds)
        .map(|_| (0..config.feature_points).map(|_| uniform_ball(&mut appearance, config.feature_radius)).collect())
        .collect();

    let paths = simulate_flight(config, &mut stream(config.seed, 2));

    let mut truth = Vec::new();
    for f in 0..config.frame_count() {
        for (bird, path) in paths.iter().enumerate() {
            truth.push(TruthRow { frame: f, identity: bird as u32 + 1, position: path[f as usize] });
        }
    }

    let mut obs_rng = stream(config.seed, 3);
    let pixel_noise = Normal::new(0.0, config.pixel_sigma).expect("validated sigma");
    let desc_noise = Normal::new(0.0, config.descriptor_sigma).expect("validated sigma");
    let mut detections = Vec::new();
    let mut keypoints = Vec::new();
    let mut detection_identity = BTreeMap::new();
    let mut keypoint_identity = BTreeMap::new();
    let mut keypoint_tally = BTreeMap::new();

    for f in 0..config.frame_count() {
        for cam in &cameras {
            let (w, h) = cam.image_size();
            let k = cam.intrinsics();
            let mut candidates: Vec<Candidate> = Vec::new();
            for (bird, path) in paths.iter().enumerate() {
                let p = path[f as usize];
                let depth = cam.to_camera_frame(&p).z;
                if depth < MIN_DEPTH {
                    continue;
                }
                let Ok(c) = cam.project(&p) else { continue };
                let (hx, hy) = (k.fx * config.body_radius / depth, k.fy * config.body_radius / depth);
                let bbox = BoundingBox { x_min: c.x - hx, y_min: c.y - hy, x_max: c.x + hx, y_max: c.y + hy };
                if bbox.x_min < 0.0 || bbox.y_min < 0.0 || bbox.x_max > w as f64 || bbox.y_max > h as f64 {
                    continue;
                }
                candidates.push(Candidate { bird, depth, bbox });
            }
            candidates.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.bird.cmp(&b.bird)));

            let mut visible: Vec<&Candidate> = Vec::new();
            for (i, c) in candidates.iter().enumerate() {
                let overlap = candidates[..i]
                    .iter()
                    .map(|n| n.bbox.intersection_area(&c.bbox) / c.bbox.area())
                    .fold(0.0, f64::max);
                let u: f64 = obs_rng.random();
                if u >= (config.occlusion_scale * overlap).min(1.0) {
                    visible.push(c);
                }
            }
            // detection order carries no identity information
            for i in (1..visible.len()).rev() {
                let j = obs_rng.random_range(0..=i);
                visible.swap(i, j);
            }

            let mut kp_index = 0u32;
            for (det_index, c) in visible.iter().enumerate() {
                let det_index = det_index as u32;
                let identity = c.bird as u32 + 1;
                detections.push(Detection {
                    camera: cam.id(),
                    frame: f,
                    detection_index: det_index,
                    bbox: c.bbox,
                    confidence: obs_rng.random_range(0.5..1.0),
                });
                detection_identity.insert((cam.id(), f, det_index), identity);

                let (kmin, kmax) = config.keypoints_per_detection;
                let count = obs_rng.random_range(kmin..=kmax);
                let mut chosen = sample(&mut obs_rng, config.feature_points, count).into_vec();
                chosen.sort_unstable();
                let center = paths[c.bird][f as usize];
                for j in chosen {
                    let ideal = cam.project(&(center + offsets[c.bird][j])).unwrap_or_else(|_| c.bbox.center());
                    let noisy = ideal + Vector2::new(pixel_noise.sample(&mut obs_rng), pixel_noise.sample(&mut obs_rng));
                    let position = Vector2::new(
                        noisy.x.clamp(c.bbox.x_min, c.bbox.x_max),
                        noisy.y.clamp(c.bbox.y_min, c.bbox.y_max),
                    );
                    let descriptor: Vec<f64> =
                        descriptors[c.bird][j].iter().map(|&d| d + desc_noise.sample(&mut obs_rng)).collect();
                    keypoints.push(Keypoint {
                        camera: cam.id(),
                        frame: f,
                        index: kp_index,
                        detection_index: det_index,
                        position,
                        descriptor,
                    });
                    keypoint_identity.insert((cam.id(), f, kp_index), identity);
                    *keypoint_tally.entry((cam.id(), f, identity)).or_insert(0) += 1;
                    kp_index += 1;
                }
            }
        }
    }

    Ok(Dataset {
        config: config.clone(),
        cameras,
        landmarks,
        detections,
        keypoints,
        truth,
        detection_identity,
        keypoint_identity,
        keypoint_tally,
    })
}

/// Ground truth in the form the metrics consume.
pub fn truth_labels(dataset: &Dataset) -> GroundTruth {
    let mut positions: BTreeMap<FrameIndex, Vec<(u32, Vector3<f64>)>> = BTreeMap::new();
    for t in &dataset.truth {
        positions.entry(t.frame).or_default().push((t.identity, t.position));
    }
    for v in positions.values_mut() {
        v.sort_by_key(|(id, _)| *id);
    }
    GroundTruth { positions, keypoint_identity: dataset.keypoint_identity.clone() }
}

impl Dataset {
    /// Writes the bundle in the pipeline's input formats plus truth files.
    /// With `render_frames`, grayscale frames go to `frames/`.
    pub fn write_to(&self, dir: &Path, render_frames: bool) -> Result<Vec<PathBuf>, IoError> {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
        let p = |name: &str| dir.join(name);
        io::write_calibration(&p("calibration.json"), &self.cameras)?;
        io::write_landmarks(&p("landmarks.csv"), &self.landmarks)?;
        io::write_detections(&p("detections.csv"), &self.detections)?;
        io::write_keypoints(&p("keypoints.csv"), &self.keypoints, self.config.descriptor_len)?;
        io::write_truth(&p("truth.csv"), &self.truth)?;
        io::write_match_truth(&p("match_truth.csv"), &self.keypoint_identity)?;
        io::write_detection_truth(&p("detection_truth.csv"), &self.detection_identity)?;
        io::write_json(&p("scene.json"), &self.config)?;
        let mut written: Vec<PathBuf> = [
            "calibration.json",
            "landmarks.csv",
            "detections.csv",
            "keypoints.csv",
            "truth.csv",
            "match_truth.csv",
            "detection_truth.csv",
            "scene.json",
        ]
        .iter()
        .map(|n| p(n))
        .collect();
        if render_frames {
            let frames = p("frames");
            std::fs::create_dir_all(&frames).map_err(|source| IoError::Io { path: frames.clone(), source })?;
            for cam in &self.cameras {
                for f in 0..self.frame_count() {
                    if let Some(img) = self.render_frame(cam.id(), f) {
                        let path = frames.join(io::frame_file_name(cam.id(), f));
                        io::write_pgm(&path, &img)?;
                        written.push(path);
                    }
                }
            }
        }
        Ok(written)
    }

    pub fn frame_count(&self) -> u32 {
        self.config.frame_count()
    }

    pub fn camera_map(&self) -> BTreeMap<CameraId, CameraModel> {
        self.cameras.iter().map(|c| (c.id(), c.clone())).collect()
    }

    pub fn landmark_set(&self) -> Result<LandmarkSet, VoronoiError> {
        let sizes = self.cameras.iter().map(|c| (c.id(), c.image_size())).collect();
        LandmarkSet::new(self.landmarks.iter().copied(), sizes)
    }

    /// Grayscale frame with birds drawn as dark discs, far to near.
    pub fn render_frame(&self, camera: CameraId, frame: FrameIndex) -> Option<GrayFrame> {
        let cam = self.cameras.iter().find(|c| c.id() == camera)?;
        let (w, h) = cam.image_size();
        let mut img = GrayFrame::filled(w, h, 170);
        let mut discs: Vec<(f64, BoundingBox)> = self
            .detections
            .iter()
            .filter(|d| d.camera == camera && d.frame == frame)
            .map(|d| {
                let identity = self.detection_identity[&(camera, frame, d.detection_index)];
                let p = self.truth[frame as usize * self.config.birds + identity as usize - 1].position;
                (cam.to_camera_frame(&p).z, d.bbox)
            })
            .collect();
        discs.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (i, (_, b)) in discs.iter().enumerate() {
            let c = b.center();
            let (rx, ry) = ((b.x_max - b.x_min) / 2.0, (b.y_max - b.y_min) / 2.0);
            let shade = 30 + (i % 4) as u8 * 10;
            let (y0, y1) = (b.y_min.floor().max(0.0) as u32, (b.y_max.ceil() as u32).min(h));
            let (x0, x1) = (b.x_min.floor().max(0.0) as u32, (b.x_max.ceil() as u32).min(w));
            for y in y0..y1 {
                for x in x0..x1 {
                    let dx = (x as f64 + 0.5 - c.x) / rx;
                    let dy = (y as f64 + 0.5 - c.y) / ry;
                    if dx * dx + dy * dy <= 1.0 {
                        img.set(x, y, shade);
                    }
                }
            }
        }
        Some(img)
    }
}
