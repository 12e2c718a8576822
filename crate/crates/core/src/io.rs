//! Readers and writers for every on-disk format.
//!
//! CSV readers check the header exactly and reject any row that does not
//! parse, reporting the file and line. Floats are written in Rust's shortest
//! round-trip form so write-then-read is lossless.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraModel, Distortion, Intrinsics};
use crate::mask::{BinaryMask, BoundingBox, GrayFrame};
use crate::matcher::{Correspondence, Detection, FeatureMatch, Keypoint, Verdict};
use crate::synthworld::TruthRow;
use crate::tracker::{TrackRecord, TrackStatus};
use crate::voronoi::Landmark;
use crate::{CameraId, FrameIndex};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
}

impl IoError {
    pub fn path(&self) -> &Path {
        match self {
            IoError::Io { path, .. } | IoError::Parse { path, .. } | IoError::Invalid { path, .. } => path,
        }
    }
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn invalid(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Invalid { path: path.to_path_buf(), message: message.into() }
}

// ---------------------------------------------------------------- CSV core

struct Row<'a> {
    path: &'a Path,
    line: u64,
    record: csv::StringRecord,
    header: &'a [String],
}

impl Row<'_> {
    fn err(&self, message: String) -> IoError {
        IoError::Parse { path: self.path.to_path_buf(), line: self.line, message }
    }

    fn raw(&self, i: usize) -> &str {
        self.record.get(i).unwrap_or("")
    }

    fn get<T: FromStr>(&self, i: usize) -> Result<T> {
        let s = self.raw(i);
        s.parse().map_err(|_| self.err(format!("column `{}`: cannot parse {s:?}", self.header[i])))
    }

    fn finite(&self, i: usize) -> Result<f64> {
        let v: f64 = self.get(i)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(format!("column `{}`: value {v} is not finite", self.header[i])))
        }
    }

    fn optional<T: FromStr>(&self, i: usize) -> Result<Option<T>> {
        if self.raw(i).is_empty() {
            Ok(None)
        } else {
            self.get(i).map(Some)
        }
    }
}

/// Reads a CSV file whose header must satisfy `check_header`, calling `f` per row.
fn read_csv_with<T>(
    path: &Path,
    check_header: impl FnOnce(&[String]) -> std::result::Result<(), String>,
    mut f: impl FnMut(&Row) -> Result<T>,
) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| IoError::Parse { path: path.to_path_buf(), line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    check_header(&header).map_err(|m| IoError::Parse { path: path.to_path_buf(), line: 1, message: m })?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IoError::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        out.push(f(&Row { path, line, record, header: &header })?);
    }
    Ok(out)
}

fn read_csv<T>(path: &Path, expected: &[&str], f: impl FnMut(&Row) -> Result<T>) -> Result<Vec<T>> {
    read_csv_with(
        path,
        |h| {
            if h.iter().map(String::as_str).eq(expected.iter().copied()) {
                Ok(())
            } else {
                Err(format!("expected header `{}`, found `{}`", expected.join(","), h.join(",")))
            }
        },
        f,
    )
}

fn write_csv<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| invalid(path, e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// ------------------------------------------------------------ calibration

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationDoc {
    cameras: Vec<CameraDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    id: CameraId,
    image_size: [u32; 2],
    #[serde(rename = "K")]
    k: [[f64; 3]; 3],
    dist: Vec<f64>,
    rvec: [f64; 3],
    tvec: [f64; 3],
}

pub fn read_calibration(path: &Path) -> Result<Vec<CameraModel>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let doc: CalibrationDoc = serde_json::from_str(&text)
        .map_err(|e| IoError::Parse { path: path.to_path_buf(), line: e.line() as u64, message: e.to_string() })?;
    let mut cameras = Vec::with_capacity(doc.cameras.len());
    for c in doc.cameras {
        let k = Matrix3::from_fn(|r, col| c.k[r][col]);
        if k[(0, 1)] != 0.0 || k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(invalid(path, format!("camera {}: K must be [[fx,0,cx],[0,fy,cy],[0,0,1]]", c.id)));
        }
        let dist = Distortion::from_slice(&c.dist).ok_or_else(|| {
            invalid(path, format!("camera {}: dist needs exactly 5 coefficients, got {}", c.id, c.dist.len()))
        })?;
        let intrinsics = Intrinsics { fx: k[(0, 0)], fy: k[(1, 1)], cx: k[(0, 2)], cy: k[(1, 2)] };
        let model = CameraModel::from_rvec(
            c.id,
            intrinsics,
            dist,
            Vector3::from(c.rvec),
            Vector3::from(c.tvec),
            (c.image_size[0], c.image_size[1]),
        )
        .map_err(|e| invalid(path, e.to_string()))?;
        if cameras.iter().any(|m: &CameraModel| m.id() == c.id) {
            return Err(invalid(path, format!("duplicate camera id {}", c.id)));
        }
        cameras.push(model);
    }
    if cameras.is_empty() {
        return Err(invalid(path, "no cameras"));
    }
    Ok(cameras)
}

pub fn write_calibration(path: &Path, cameras: &[CameraModel]) -> Result<()> {
    let doc = CalibrationDoc {
        cameras: cameras
            .iter()
            .map(|c| {
                let k = c.intrinsic_matrix();
                let (w, h) = c.image_size();
                CameraDoc {
                    id: c.id(),
                    image_size: [w, h],
                    k: [[k[(0, 0)], k[(0, 1)], k[(0, 2)]], [k[(1, 0)], k[(1, 1)], k[(1, 2)]], [k[(2, 0)], k[(2, 1)], k[(2, 2)]]],
                    dist: c.distortion().to_array().to_vec(),
                    rvec: c.rvec().into(),
                    tvec: (*c.translation()).into(),
                }
            })
            .collect(),
    };
    write_json(path, &doc)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| invalid(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

// -------------------------------------------------------------- landmarks

const LANDMARK_HEADER: &[&str] = &["camera_id", "global_id", "x_px", "y_px"];

pub fn read_landmarks(path: &Path) -> Result<Vec<Landmark>> {
    read_csv(path, LANDMARK_HEADER, |r| {
        Ok(Landmark { camera: r.get(0)?, global_id: r.get(1)?, position: Vector2::new(r.finite(2)?, r.finite(3)?) })
    })
}

pub fn write_landmarks(path: &Path, landmarks: &[Landmark]) -> Result<()> {
    write_csv(
        path,
        &header(LANDMARK_HEADER),
        landmarks.iter().map(|l| {
            [l.camera.to_string(), l.global_id.to_string(), l.position.x.to_string(), l.position.y.to_string()]
        }),
    )
}

// ------------------------------------------------------------- detections

const DETECTION_HEADER: &[&str] =
    &["camera_id", "frame", "detection_index", "x_min", "y_min", "x_max", "y_max", "confidence"];

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    read_csv(path, DETECTION_HEADER, |r| {
        let bbox = BoundingBox { x_min: r.finite(3)?, y_min: r.finite(4)?, x_max: r.finite(5)?, y_max: r.finite(6)? };
        if !(bbox.x_min <= bbox.x_max && bbox.y_min <= bbox.y_max) {
            return Err(r.err("box has min greater than max".into()));
        }
        Ok(Detection { camera: r.get(0)?, frame: r.get(1)?, detection_index: r.get(2)?, bbox, confidence: r.finite(7)? })
    })
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    write_csv(
        path,
        &header(DETECTION_HEADER),
        detections.iter().map(|d| {
            [
                d.camera.to_string(),
                d.frame.to_string(),
                d.detection_index.to_string(),
                d.bbox.x_min.to_string(),
                d.bbox.y_min.to_string(),
                d.bbox.x_max.to_string(),
                d.bbox.y_max.to_string(),
                d.confidence.to_string(),
            ]
        }),
    )
}

// -------------------------------------------------------------- keypoints

const KEYPOINT_FIXED: &[&str] = &["camera_id", "frame", "detection_index", "x_px", "y_px"];

/// Reads keypoints; `index` is assigned as the ordinal of the row within its
/// `(camera, frame)`.
pub fn read_keypoints(path: &Path) -> Result<Vec<Keypoint>> {
    let mut next_index: BTreeMap<(CameraId, FrameIndex), u32> = BTreeMap::new();
    read_csv_with(
        path,
        |h| {
            let fixed_ok = h.len() > KEYPOINT_FIXED.len()
                && h.iter().take(KEYPOINT_FIXED.len()).map(String::as_str).eq(KEYPOINT_FIXED.iter().copied());
            let desc_ok = h.iter().skip(KEYPOINT_FIXED.len()).enumerate().all(|(i, n)| *n == format!("d{i}"));
            if fixed_ok && desc_ok {
                Ok(())
            } else {
                Err(format!("expected header `{},d0,...,d{{L-1}}`, found `{}`", KEYPOINT_FIXED.join(","), h.join(",")))
            }
        },
        |r| {
            let camera: CameraId = r.get(0)?;
            let frame: FrameIndex = r.get(1)?;
            let descriptor =
                (KEYPOINT_FIXED.len()..r.header.len()).map(|i| r.finite(i)).collect::<Result<Vec<f64>>>()?;
            let slot = next_index.entry((camera, frame)).or_insert(0);
            let index = *slot;
            *slot += 1;
            Ok(Keypoint {
                camera,
                frame,
                index,
                detection_index: r.get(2)?,
                position: Vector2::new(r.finite(3)?, r.finite(4)?),
                descriptor,
            })
        },
    )
}

/// Writes keypoints sorted by `(camera, frame, index)` so that reading them
/// back reproduces each `index`.
pub fn write_keypoints(path: &Path, keypoints: &[Keypoint], len: usize) -> Result<()> {
    if len == 0 {
        return Err(invalid(path, "keypoints need a non-empty descriptor"));
    }
    if keypoints.iter().any(|k| k.descriptor.len() != len) {
        return Err(invalid(path, "descriptor length differs between keypoints"));
    }
    let mut sorted: Vec<&Keypoint> = keypoints.iter().collect();
    sorted.sort_by_key(|k| (k.camera, k.frame, k.index));
    let mut names = header(KEYPOINT_FIXED);
    names.extend((0..len).map(|i| format!("d{i}")));
    write_csv(
        path,
        &names,
        sorted.into_iter().map(|k| {
            let mut row = vec![
                k.camera.to_string(),
                k.frame.to_string(),
                k.detection_index.to_string(),
                k.position.x.to_string(),
                k.position.y.to_string(),
            ];
            row.extend(k.descriptor.iter().map(f64::to_string));
            row
        }),
    )
}

// ---------------------------------------------------------------- matches

const MATCH_HEADER: &[&str] = &[
    "frame",
    "camera_a",
    "camera_b",
    "keypoint_a",
    "keypoint_b",
    "detection_a",
    "detection_b",
    "x_a",
    "y_a",
    "x_b",
    "y_b",
    "descriptor_distance",
    "landmark_a",
    "landmark_b",
    "verdict",
];

fn parse_verdict(r: &Row, i: usize) -> Result<Verdict> {
    match r.raw(i) {
        "pending" => Ok(Verdict::Pending),
        "kept" => Ok(Verdict::Kept),
        "rejected" => Ok(Verdict::Rejected),
        other => Err(r.err(format!("column `verdict`: unknown value {other:?}"))),
    }
}

pub fn read_matches(path: &Path) -> Result<Vec<FeatureMatch>> {
    read_csv(path, MATCH_HEADER, |r| {
        Ok(FeatureMatch {
            frame: r.get(0)?,
            camera_a: r.get(1)?,
            camera_b: r.get(2)?,
            keypoint_a: r.get(3)?,
            keypoint_b: r.get(4)?,
            detection_a: r.get(5)?,
            detection_b: r.get(6)?,
            position_a: Vector2::new(r.finite(7)?, r.finite(8)?),
            position_b: Vector2::new(r.finite(9)?, r.finite(10)?),
            descriptor_distance: r.finite(11)?,
            landmark_a: r.optional(12)?,
            landmark_b: r.optional(13)?,
            verdict: parse_verdict(r, 14)?,
        })
    })
}

pub fn write_matches(path: &Path, matches: &[FeatureMatch]) -> Result<()> {
    write_csv(
        path,
        &header(MATCH_HEADER),
        matches.iter().map(|m| {
            [
                m.frame.to_string(),
                m.camera_a.to_string(),
                m.camera_b.to_string(),
                m.keypoint_a.to_string(),
                m.keypoint_b.to_string(),
                m.detection_a.to_string(),
                m.detection_b.to_string(),
                m.position_a.x.to_string(),
                m.position_a.y.to_string(),
                m.position_b.x.to_string(),
                m.position_b.y.to_string(),
                m.descriptor_distance.to_string(),
                opt(m.landmark_a),
                opt(m.landmark_b),
                m.verdict.as_str().to_string(),
            ]
        }),
    )
}

// -------------------------------------------------------- correspondences

const CORRESPONDENCE_HEADER: &[&str] =
    &["frame", "camera_a", "camera_b", "detection_a", "detection_b", "support", "mean_descriptor_distance"];

pub fn read_correspondences(path: &Path) -> Result<Vec<Correspondence>> {
    read_csv(path, CORRESPONDENCE_HEADER, |r| {
        Ok(Correspondence {
            frame: r.get(0)?,
            camera_a: r.get(1)?,
            camera_b: r.get(2)?,
            detection_a: r.get(3)?,
            detection_b: r.get(4)?,
            support: r.get(5)?,
            mean_descriptor_distance: r.finite(6)?,
        })
    })
}

pub fn write_correspondences(path: &Path, correspondences: &[Correspondence]) -> Result<()> {
    write_csv(
        path,
        &header(CORRESPONDENCE_HEADER),
        correspondences.iter().map(|c| {
            [
                c.frame.to_string(),
                c.camera_a.to_string(),
                c.camera_b.to_string(),
                c.detection_a.to_string(),
                c.detection_b.to_string(),
                c.support.to_string(),
                c.mean_descriptor_distance.to_string(),
            ]
        }),
    )
}

// ----------------------------------------------------------- observations

/// One row of the observation file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationRow {
    pub frame: FrameIndex,
    pub track_hint: u64,
    pub position: Vector3<f64>,
    pub err_cam_a_px: f64,
    pub err_cam_b_px: f64,
}

const OBSERVATION_HEADER: &[&str] = &["frame", "track_hint", "x_m", "y_m", "z_m", "err_cam_a_px", "err_cam_b_px"];

pub fn read_observations(path: &Path) -> Result<Vec<ObservationRow>> {
    read_csv(path, OBSERVATION_HEADER, |r| {
        Ok(ObservationRow {
            frame: r.get(0)?,
            track_hint: r.get(1)?,
            position: Vector3::new(r.finite(2)?, r.finite(3)?, r.finite(4)?),
            err_cam_a_px: r.finite(5)?,
            err_cam_b_px: r.finite(6)?,
        })
    })
}

pub fn write_observations(path: &Path, rows: &[ObservationRow]) -> Result<()> {
    write_csv(
        path,
        &header(OBSERVATION_HEADER),
        rows.iter().map(|o| {
            [
                o.frame.to_string(),
                o.track_hint.to_string(),
                o.position.x.to_string(),
                o.position.y.to_string(),
                o.position.z.to_string(),
                o.err_cam_a_px.to_string(),
                o.err_cam_b_px.to_string(),
            ]
        }),
    )
}

// ----------------------------------------------------------------- tracks

const TRACK_HEADER: &[&str] = &["frame", "track_id", "status", "x_m", "y_m", "z_m"];

pub fn read_tracks(path: &Path) -> Result<Vec<TrackRecord>> {
    read_csv(path, TRACK_HEADER, |r| {
        let status = match r.raw(2) {
            "tentative" => TrackStatus::Tentative,
            "confirmed" => TrackStatus::Confirmed,
            "dead" => TrackStatus::Dead,
            other => return Err(r.err(format!("column `status`: unknown value {other:?}"))),
        };
        Ok(TrackRecord {
            frame: r.get(0)?,
            track_id: r.get(1)?,
            status,
            position: Vector3::new(r.finite(3)?, r.finite(4)?, r.finite(5)?),
        })
    })
}

pub fn write_tracks(path: &Path, records: &[TrackRecord]) -> Result<()> {
    write_csv(
        path,
        &header(TRACK_HEADER),
        records.iter().map(|t| {
            [
                t.frame.to_string(),
                t.track_id.to_string(),
                t.status.as_str().to_string(),
                t.position.x.to_string(),
                t.position.y.to_string(),
                t.position.z.to_string(),
            ]
        }),
    )
}

// ------------------------------------------------------------------ truth

const TRUTH_HEADER: &[&str] = &["frame", "identity", "x_m", "y_m", "z_m"];

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    read_csv(path, TRUTH_HEADER, |r| {
        Ok(TruthRow {
            frame: r.get(0)?,
            identity: r.get(1)?,
            position: Vector3::new(r.finite(2)?, r.finite(3)?, r.finite(4)?),
        })
    })
}

pub fn write_truth(path: &Path, rows: &[TruthRow]) -> Result<()> {
    write_csv(
        path,
        &header(TRUTH_HEADER),
        rows.iter().map(|t| {
            [
                t.frame.to_string(),
                t.identity.to_string(),
                t.position.x.to_string(),
                t.position.y.to_string(),
                t.position.z.to_string(),
            ]
        }),
    )
}

const MATCH_TRUTH_HEADER: &[&str] = &["camera_id", "frame", "keypoint_index", "identity"];
const DETECTION_TRUTH_HEADER: &[&str] = &["camera_id", "frame", "detection_index", "identity"];

pub type IdentityLabels = BTreeMap<(CameraId, FrameIndex, u32), u32>;

fn read_labels(path: &Path, names: &[&str]) -> Result<IdentityLabels> {
    let rows = read_csv(path, names, |r| Ok(((r.get(0)?, r.get(1)?, r.get(2)?), r.get(3)?)))?;
    let mut out = BTreeMap::new();
    for (key, id) in rows {
        if out.insert(key, id).is_some() {
            return Err(invalid(path, format!("duplicate label for {key:?}")));
        }
    }
    Ok(out)
}

fn write_labels(path: &Path, names: &[&str], labels: &IdentityLabels) -> Result<()> {
    write_csv(
        path,
        &header(names),
        labels.iter().map(|((c, f, i), id)| [c.to_string(), f.to_string(), i.to_string(), id.to_string()]),
    )
}

/// Keypoint identities, keyed by keypoint ordinal within `(camera, frame)`.
pub fn read_match_truth(path: &Path) -> Result<IdentityLabels> {
    read_labels(path, MATCH_TRUTH_HEADER)
}

pub fn write_match_truth(path: &Path, labels: &IdentityLabels) -> Result<()> {
    write_labels(path, MATCH_TRUTH_HEADER, labels)
}

pub fn read_detection_truth(path: &Path) -> Result<IdentityLabels> {
    read_labels(path, DETECTION_TRUTH_HEADER)
}

pub fn write_detection_truth(path: &Path, labels: &IdentityLabels) -> Result<()> {
    write_labels(path, DETECTION_TRUTH_HEADER, labels)
}

// -------------------------------------------------------------------- PGM

pub fn frame_file_name(camera: CameraId, frame: FrameIndex) -> String {
    format!("cam{camera}_frame{frame}.pgm")
}

pub fn read_pgm(path: &Path) -> Result<GrayFrame> {
    let img = image::open(path).map_err(|e| invalid(path, e.to_string()))?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        _ => return Err(invalid(path, "expected an 8-bit grayscale PGM")),
    };
    let (w, h) = gray.dimensions();
    GrayFrame::new(w, h, gray.into_raw()).map_err(|e| invalid(path, e.to_string()))
}

pub fn write_pgm(path: &Path, frame: &GrayFrame) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let encoder = image::codecs::pnm::PnmEncoder::new(&mut w)
        .with_subtype(image::codecs::pnm::PnmSubtype::Graymap(image::codecs::pnm::SampleEncoding::Binary));
    use image::ImageEncoder;
    encoder
        .write_image(frame.pixels(), frame.width(), frame.height(), image::ExtendedColorType::L8)
        .map_err(|e| invalid(path, e.to_string()))?;
    w.flush().map_err(io_err(path))
}

pub fn write_mask_pgm(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_pgm(path, &mask.to_gray())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}
