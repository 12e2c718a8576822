//! Pipeline configuration as a single JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{DEFAULT_CANNY_HIGH, DEFAULT_CANNY_LOW};
use crate::matcher::{RejectionAnchor, DEFAULT_K, DEFAULT_MIN_SUPPORT, DEFAULT_RATIO};
use crate::metrics::TrackingMetricsConfig;
use crate::reconstruct::{FusionMode, ReconstructConfig, Volume};
use crate::tracker::TrackerConfig;
use crate::CameraId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{}: {message}", path.display())]
    Unreadable { path: PathBuf, message: String },
    #[error("invalid parameter `{name}`: {message}")]
    OutOfRange { name: &'static str, message: String },
}

/// Input and output locations. Unset inputs default to the standard file
/// names inside `input_dir`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub input_dir: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub keypoints: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub match_truth: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl PathsConfig {
    fn resolve(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        match (explicit, &self.input_dir) {
            (Some(p), _) => p.clone(),
            (None, Some(dir)) => dir.join(default_name),
            (None, None) => PathBuf::from(default_name),
        }
    }

    pub fn detections(&self) -> PathBuf {
        self.resolve(&self.detections, "detections.csv")
    }

    pub fn keypoints(&self) -> PathBuf {
        self.resolve(&self.keypoints, "keypoints.csv")
    }

    pub fn landmarks(&self) -> PathBuf {
        self.resolve(&self.landmarks, "landmarks.csv")
    }

    pub fn calibration(&self) -> PathBuf {
        self.resolve(&self.calibration, "calibration.json")
    }

    pub fn frames(&self) -> PathBuf {
        self.resolve(&self.frames, "frames")
    }

    pub fn truth(&self) -> PathBuf {
        self.resolve(&self.truth, "truth.csv")
    }

    pub fn match_truth(&self) -> PathBuf {
        self.resolve(&self.match_truth, "match_truth.csv")
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagesConfig {
    /// Gate keypoints by the edge-fill mask of each frame.
    pub mask: bool,
    /// Apply the landmark-agreement test; when off every match is kept.
    pub rejection: bool,
    pub anchor: RejectionAnchor,
    pub fusion: FusionMode,
}

impl Default for StagesConfig {
    fn default() -> Self {
        Self { mask: false, rejection: true, anchor: RejectionAnchor::Keypoint, fusion: FusionMode::AllPairs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub k: usize,
    /// Lowe ratio; `null` disables the ratio test.
    pub ratio: Option<f64>,
    pub min_support: usize,
    /// Camera pairs to match; all pairs when empty.
    pub camera_pairs: Vec<(CameraId, CameraId)>,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K, ratio: Some(DEFAULT_RATIO), min_support: DEFAULT_MIN_SUPPORT, camera_pairs: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub canny_low: f64,
    pub canny_high: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { canny_low: DEFAULT_CANNY_LOW, canny_high: DEFAULT_CANNY_HIGH }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSettings {
    pub fusion_radius: f64,
    pub bounds: Option<Volume>,
}

impl Default for ReconstructSettings {
    fn default() -> Self {
        Self { fusion_radius: ReconstructConfig::default().fusion_radius, bounds: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub stages: StagesConfig,
    pub matching: MatchingConfig,
    pub mask: MaskConfig,
    pub reconstruct: ReconstructSettings,
    pub tracker: TrackerConfig,
    pub metrics: TrackingMetricsConfig,
    /// Worker threads for per-frame stages; 0 uses all cores.
    pub threads: usize,
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Unreadable { path: path.to_path_buf(), message: e.to_string() })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", e.line()),
        })
    }

    pub fn reconstruct_config(&self) -> ReconstructConfig {
        ReconstructConfig {
            fusion: self.stages.fusion,
            fusion_radius: self.reconstruct.fusion_radius,
            bounds: self.reconstruct.bounds,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |name: &'static str, ok: bool, message: String| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange { name, message })
            }
        };
        let m = &self.matching;
        range("matching.k", m.k >= 1, format!("must be at least 1, got {}", m.k))?;
        if let Some(r) = m.ratio {
            range("matching.ratio", r > 0.0 && r <= 1.0, format!("must lie in (0, 1], got {r}"))?;
            range("matching.k", m.k >= 2, "ratio test needs k >= 2".into())?;
        }
        range("matching.min_support", m.min_support >= 1, "must be at least 1".into())?;
        for &(a, b) in &m.camera_pairs {
            range("matching.camera_pairs", a != b, format!("pair ({a}, {b}) repeats a camera"))?;
        }
        let k = &self.mask;
        range(
            "mask",
            (0.0..=255.0).contains(&k.canny_low) && (0.0..=255.0).contains(&k.canny_high) && k.canny_low <= k.canny_high,
            format!("canny thresholds {} / {} must satisfy 0 <= low <= high <= 255", k.canny_low, k.canny_high),
        )?;
        let r = self.reconstruct.fusion_radius;
        range("reconstruct.fusion_radius", r > 0.0 && r.is_finite(), format!("must be positive, got {r}"))?;
        let t = &self.tracker;
        range("tracker.fps", t.fps > 0.0 && t.fps.is_finite(), format!("must be positive, got {}", t.fps))?;
        range("tracker.gate", t.gate > 0.0, format!("must be positive, got {}", t.gate))?;
        range("tracker.sigma_jerk", t.sigma_jerk >= 0.0, format!("must be non-negative, got {}", t.sigma_jerk))?;
        range(
            "tracker.measurement_sigma",
            t.measurement_sigma > 0.0,
            format!("must be positive, got {}", t.measurement_sigma),
        )?;
        range("tracker.confirm_hits", t.confirm_hits >= 1, "must be at least 1".into())?;
        range("tracker.max_misses", t.max_misses >= 1, "must be at least 1".into())?;
        let mt = &self.metrics;
        range("metrics.gate", mt.gate > 0.0, format!("must be positive, got {}", mt.gate))?;
        range("metrics.fps", mt.fps > 0.0, format!("must be positive, got {}", mt.fps))?;
        range("metrics.horizons_s", mt.horizons_s.iter().all(|h| *h > 0.0), "horizons must be positive".into())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.matching.ratio, Some(0.75));
        assert!(!c.stages.mask);
        assert_eq!(c.tracker.gate, 0.5);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"matching": {"ratio": null}, "threads": 3}"#).unwrap();
        assert_eq!(c.matching.ratio, None);
        assert_eq!(c.matching.min_support, 2);
        assert_eq!(c.threads, 3);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn range_checks() {
        let mut c = PipelineConfig::default();
        c.matching.ratio = Some(1.5);
        assert!(matches!(c.validate(), Err(ConfigError::OutOfRange { name: "matching.ratio", .. })));
        let mut c = PipelineConfig::default();
        c.mask.canny_low = 200.0;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.tracker.gate = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn path_resolution() {
        let p = PathsConfig { input_dir: Some("data".into()), landmarks: Some("x/l.csv".into()), ..Default::default() };
        assert_eq!(p.calibration(), PathBuf::from("data/calibration.json"));
        assert_eq!(p.landmarks(), PathBuf::from("x/l.csv"));
    }
}
