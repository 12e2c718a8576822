//! Pinhole camera with Brown-Conrady lens distortion.
//!
//! World points map to pixels as
//!
//! ```text
//! Xc = R·Xw + t
//! (x, y) = (Xc.x / Xc.z, Xc.y / Xc.z)
//! r² = x² + y²
//! radial = 1 + k1·r² + k2·r⁴ + k3·r⁶
//! xd = x·radial + 2·p1·x·y + p2·(r² + 2x²)
//! yd = y·radial + p1·(r² + 2y²) + 2·p2·x·y
//! (u, v) = (fx·xd + cx, fy·yd + cy)
//! ```
//!
//! The projection matrix `P = K·[R | t]` describes the undistorted part of
//! this mapping and is what triangulation works with.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::CameraId;

/// Depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-12;

/// Default threshold for the "below threshold" share in [`ErrorStats`].
pub const REPROJECTION_THRESHOLD_PX: f64 = 25.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point is behind camera {camera} (depth {depth})")]
    BehindCamera { camera: CameraId, depth: f64 },
    #[error("invalid camera {camera}: {reason}")]
    InvalidModel { camera: CameraId, reason: String },
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {projected} projected vs {observed} observed points")]
    LengthMismatch { projected: usize, observed: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
}

/// Brown-Conrady coefficients `k1, k2, p1, p2, k3`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub k3: f64,
}

impl Distortion {
    pub fn from_slice(coeffs: &[f64]) -> Option<Self> {
        match coeffs {
            [k1, k2, p1, p2, k3] => Some(Self { k1: *k1, k2: *k2, p1: *p1, p2: *p2, k3: *k3 }),
            _ => None,
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.k1, self.k2, self.p1, self.p2, self.k3]
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|c| *c == 0.0)
    }

    /// Applies the distortion to normalized image coordinates.
    pub fn distort(&self, p: Vector2<f64>) -> Vector2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        Vector2::new(
            x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y,
        )
    }

    fn jacobian(&self, p: Vector2<f64>) -> nalgebra::Matrix2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        // d(radial)/d(r2)
        let dradial = self.k1 + r2 * (2.0 * self.k2 + 3.0 * r2 * self.k3);
        let dxdx = radial + 2.0 * x * x * dradial + 2.0 * self.p1 * y + 6.0 * self.p2 * x;
        let dxdy = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y;
        let dydx = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y;
        let dydy = radial + 2.0 * y * y * dradial + 6.0 * self.p1 * y + 2.0 * self.p2 * x;
        nalgebra::Matrix2::new(dxdx, dxdy, dydx, dydy)
    }

    /// Inverts [`Distortion::distort`] with at most 10 Newton steps started
    /// from the distorted point itself.
    pub fn undistort(&self, distorted: Vector2<f64>) -> Vector2<f64> {
        if self.is_zero() {
            return distorted;
        }
        let mut p = distorted;
        for _ in 0..10 {
            let residual = self.distort(p) - distorted;
            if residual.norm() < 1e-15 {
                break;
            }
            match self.jacobian(p).try_inverse() {
                Some(inv) => p -= inv * residual,
                None => p -= residual,
            }
        }
        p
    }
}

/// 3×4 pixel-homogeneous projection matrix `K·[R | t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(pub Matrix3x4<f64>);

impl ProjectionMatrix {
    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    /// Projects a world point without distortion. `None` when the homogeneous
    /// scale vanishes.
    pub fn project(&self, point: &Vector3<f64>) -> Option<Vector2<f64>> {
        let h = self.0 * point.push(1.0);
        (h.z.abs() > MIN_DEPTH).then(|| Vector2::new(h.x / h.z, h.y / h.z))
    }
}

/// Immutable calibrated camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    id: CameraId,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    dist: Distortion,
    rotation: Matrix3<f64>,
    /// Axis-angle parameters the rotation was built from, kept verbatim.
    rvec: Vector3<f64>,
    translation: Vector3<f64>,
    image_size: (u32, u32),
}

/// Intrinsic parameters in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn new(
        id: CameraId,
        intrinsics: Intrinsics,
        dist: Distortion,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image_size: (u32, u32),
    ) -> Result<Self, CameraError> {
        let invalid = |reason: String| CameraError::InvalidModel { camera: id, reason };
        let Intrinsics { fx, fy, cx, cy } = intrinsics;
        let (w, h) = image_size;
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(invalid(format!("focal lengths must be positive, got fx={fx}, fy={fy}")));
        }
        if !(cx >= 0.0 && cx < w as f64 && cy >= 0.0 && cy < h as f64) {
            return Err(invalid(format!("principal point ({cx}, {cy}) outside {w}x{h} image")));
        }
        if dist.to_array().iter().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite distortion coefficient".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9) {
            return Err(invalid(format!(
                "rotation is not a proper orthonormal matrix (|RᵀR−I|={ortho:e}, det={det})"
            )));
        }
        if translation.iter().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite translation".into()));
        }
        let rvec = Rotation3::from_matrix_unchecked(rotation).scaled_axis();
        Ok(Self { id, fx, fy, cx, cy, dist, rotation, rvec, translation, image_size })
    }

    /// Builds a camera from an axis-angle rotation vector.
    pub fn from_rvec(
        id: CameraId,
        intrinsics: Intrinsics,
        dist: Distortion,
        rvec: Vector3<f64>,
        tvec: Vector3<f64>,
        image_size: (u32, u32),
    ) -> Result<Self, CameraError> {
        if rvec.iter().any(|c| !c.is_finite()) {
            return Err(CameraError::InvalidModel { camera: id, reason: "non-finite rotation vector".into() });
        }
        let rotation = Rotation3::from_scaled_axis(rvec).into_inner();
        let mut cam = Self::new(id, intrinsics, dist, rotation, tvec, image_size)?;
        cam.rvec = rvec;
        Ok(cam)
    }

    pub fn id(&self) -> CameraId {
        self.id
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics { fx: self.fx, fy: self.fy, cx: self.cx, cy: self.cy }
    }

    pub fn distortion(&self) -> Distortion {
        self.dist
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    /// Axis-angle form of the rotation.
    pub fn rvec(&self) -> Vector3<f64> {
        self.rvec
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    /// Camera center in world coordinates, `-Rᵀ·t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn projection_matrix(&self) -> ProjectionMatrix {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &self.translation);
        ProjectionMatrix(self.intrinsic_matrix() * rt)
    }

    pub fn to_camera_frame(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Projects a world point to distorted pixel coordinates.
    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        let pc = self.to_camera_frame(point);
        if pc.z <= MIN_DEPTH {
            return Err(CameraError::BehindCamera { camera: self.id, depth: pc.z });
        }
        let distorted = self.dist.distort(Vector2::new(pc.x / pc.z, pc.y / pc.z));
        Ok(Vector2::new(self.fx * distorted.x + self.cx, self.fy * distorted.y + self.cy))
    }

    /// Maps a distorted pixel to the pixel an ideal pinhole camera with the
    /// same intrinsics would have observed.
    pub fn undistort_pixel(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        if self.dist.is_zero() {
            return *pixel;
        }
        let normalized = Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy);
        let ideal = self.dist.undistort(normalized);
        Vector2::new(self.fx * ideal.x + self.cx, self.fy * ideal.y + self.cy)
    }

    pub fn contains_pixel(&self, pixel: &Vector2<f64>) -> bool {
        let (w, h) = self.image_size;
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < w as f64 && pixel.y < h as f64
    }

    fn with_params(&self, params: &CalibrationParams) -> Option<Self> {
        Self::from_rvec(
            self.id,
            Intrinsics { fx: params.0[0], fy: params.0[1], cx: params.0[2], cy: params.0[3] },
            self.dist,
            params.rvec(),
            Vector3::new(params.0[4], params.0[5], params.0[6]),
            self.image_size,
        )
        .ok()
    }
}

/// Aggregate reprojection error statistics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub threshold_px: f64,
    pub percent_below_threshold: f64,
}

impl ErrorStats {
    /// Summarizes per-point errors against `threshold_px`.
    pub fn from_errors(errors: &[f64], threshold_px: f64) -> Result<Self, CameraError> {
        let (mean, std) = crate::linalg::mean_std(errors).ok_or(CameraError::EmptyInput)?;
        let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
        let max = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let below = errors.iter().filter(|e| **e < threshold_px).count();
        Ok(Self {
            count: errors.len(),
            mean,
            std,
            min,
            max,
            threshold_px,
            percent_below_threshold: 100.0 * below as f64 / errors.len() as f64,
        })
    }
}

/// Pairwise Euclidean distances between projected and observed pixels,
/// aggregated with the default 25 px threshold.
pub fn reprojection_error(
    projected: &[Vector2<f64>],
    observed: &[Vector2<f64>],
) -> Result<ErrorStats, CameraError> {
    if projected.len() != observed.len() {
        return Err(CameraError::LengthMismatch { projected: projected.len(), observed: observed.len() });
    }
    let errors: Vec<f64> = projected.iter().zip(observed).map(|(p, o)| (p - o).norm()).collect();
    ErrorStats::from_errors(&errors, REPROJECTION_THRESHOLD_PX)
}

/// (fx, fy, cx, cy, tx, ty, tz, rx, ry, rz)
#[derive(Debug, Clone, Copy)]
struct CalibrationParams([f64; 10]);

impl CalibrationParams {
    fn of(cam: &CameraModel) -> Self {
        let r = cam.rvec();
        let t = cam.translation;
        Self([cam.fx, cam.fy, cam.cx, cam.cy, t.x, t.y, t.z, r.x, r.y, r.z])
    }

    fn rvec(&self) -> Vector3<f64> {
        Vector3::new(self.0[7], self.0[8], self.0[9])
    }
}

/// Result of [`refine_calibration_with_history`].
#[derive(Debug, Clone)]
pub struct Refinement {
    pub camera: CameraModel,
    /// Total reprojection error before the first sweep and after each sweep.
    pub error_history: Vec<f64>,
}

pub const MAX_REFINEMENT_SWEEPS: usize = 200;
pub const REFINEMENT_RELATIVE_TOLERANCE: f64 = 1e-8;

/// Sum of pixel distances between projections and observations; infinite if
/// any point falls behind the camera.
pub fn total_reprojection_error(cam: &CameraModel, known: &[(Vector3<f64>, Vector2<f64>)]) -> f64 {
    known
        .iter()
        .map(|(world, pixel)| match cam.project(world) {
            Ok(p) => (p - pixel).norm(),
            Err(_) => f64::INFINITY,
        })
        .sum()
}

/// Refines intrinsics and pose against known world/pixel correspondences.
pub fn refine_calibration(
    cam: &CameraModel,
    known: &[(Vector3<f64>, Vector2<f64>)],
) -> Result<CameraModel, CameraError> {
    refine_calibration_with_history(cam, known).map(|r| r.camera)
}

/// Derivative-free coordinate descent over
/// `(fx, fy, cx, cy, t, rotation as axis-angle)` with per-parameter step
/// halving. Every accepted move strictly lowers the total error, so the
/// history is non-increasing.
pub fn refine_calibration_with_history(
    cam: &CameraModel,
    known: &[(Vector3<f64>, Vector2<f64>)],
) -> Result<Refinement, CameraError> {
    if known.len() < 6 {
        return Err(CameraError::DegenerateConfiguration(format!(
            "need at least 6 known points, got {}",
            known.len()
        )));
    }
    check_dlt_rank(known)?;

    let (w, h) = cam.image_size;
    let mut params = CalibrationParams::of(cam);
    let t_scale = cam.translation.norm().max(1.0);
    let mut steps = [
        0.01 * cam.fx,
        0.01 * cam.fy,
        0.01 * w as f64,
        0.01 * h as f64,
        0.01 * t_scale,
        0.01 * t_scale,
        0.01 * t_scale,
        0.01,
        0.01,
        0.01,
    ];
    let min_steps: Vec<f64> = steps.iter().map(|s| s * 1e-12).collect();

    let mut best = cam.clone();
    let mut best_err = total_reprojection_error(cam, known);
    let mut history = vec![best_err];

    for _sweep in 0..MAX_REFINEMENT_SWEEPS {
        let sweep_start = best_err;
        let mut moved = false;
        for i in 0..params.0.len() {
            let mut improved = false;
            for sign in [1.0, -1.0] {
                let mut trial = params;
                trial.0[i] += sign * steps[i];
                let Some(candidate) = cam.with_params(&trial) else { continue };
                let err = total_reprojection_error(&candidate, known);
                if err < best_err {
                    params = trial;
                    best = candidate;
                    best_err = err;
                    improved = true;
                    break;
                }
            }
            if improved {
                moved = true;
            } else {
                steps[i] *= 0.5;
            }
        }
        history.push(best_err);

        if best_err == 0.0 || steps.iter().zip(&min_steps).all(|(s, m)| s < m) {
            break;
        }
        if moved && (sweep_start - best_err) <= REFINEMENT_RELATIVE_TOLERANCE * sweep_start {
            break;
        }
    }

    Ok(Refinement { camera: best, error_history: history })
}

/// Rejects point sets whose normalized DLT system has rank below 11, which is
/// the case for coplanar or collinear world points.
fn check_dlt_rank(known: &[(Vector3<f64>, Vector2<f64>)]) -> Result<(), CameraError> {
    let n = known.len() as f64;
    let world_mean = known.iter().map(|(w, _)| w).sum::<Vector3<f64>>() / n;
    let pixel_mean = known.iter().map(|(_, p)| p).sum::<Vector2<f64>>() / n;
    let world_scale = known.iter().map(|(w, _)| (w - world_mean).norm()).sum::<f64>() / n;
    let pixel_scale = known.iter().map(|(_, p)| (p - pixel_mean).norm()).sum::<f64>() / n;
    if world_scale <= 0.0 || pixel_scale <= 0.0 {
        return Err(CameraError::DegenerateConfiguration("points are coincident".into()));
    }

    let mut a = DMatrix::<f64>::zeros(2 * known.len(), 12);
    for (i, (world, pixel)) in known.iter().enumerate() {
        let x = ((world - world_mean) / world_scale).push(1.0);
        let u = (pixel - pixel_mean) / pixel_scale;
        for j in 0..4 {
            a[(2 * i, j)] = x[j];
            a[(2 * i, 8 + j)] = -u.x * x[j];
            a[(2 * i + 1, 4 + j)] = x[j];
            a[(2 * i + 1, 8 + j)] = -u.y * x[j];
        }
    }
    let sv = a.singular_values();
    let largest = sv.max();
    let rank = sv.iter().filter(|s| **s > 1e-9 * largest).count();
    if rank < 11 {
        return Err(CameraError::DegenerateConfiguration(format!(
            "verification system has rank {rank} < 11 (coplanar or collinear points)"
        )));
    }
    Ok(())
}
