//! Landmark sets and bounded Voronoi tessellation of camera images.
//!
//! Each camera sees a set of landmarks at known pixel positions. The image is
//! partitioned into cells, one per landmark, holding the pixels whose nearest
//! landmark (Euclidean) it is. Cells are built by half-plane intersection:
//! the frame is padded by its diagonal on every side and 16 virtual sites are
//! placed on the padded boundary, so every real cell closes well away from the
//! frame before being clipped to it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::Vector2;
use thiserror::Error;

use crate::CameraId;

/// Number of virtual sites placed on the padded boundary.
pub const VIRTUAL_SITE_COUNT: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoronoiError {
    #[error("no landmarks for camera {0}")]
    NoLandmarks(CameraId),
    #[error("no image size known for camera {0}")]
    UnknownCamera(CameraId),
    #[error("landmark {global_id} of camera {camera} at ({x}, {y}) is outside the {width}x{height} frame")]
    OutOfFrame { camera: CameraId, global_id: u32, x: f64, y: f64, width: u32, height: u32 },
    #[error("camera {camera}: landmarks {a} and {b} coincide")]
    Coincident { camera: CameraId, a: u32, b: u32 },
    #[error("camera {camera}: landmark id {global_id} appears twice")]
    DuplicateId { camera: CameraId, global_id: u32 },
}

/// Euclidean pixel distance.
pub fn euclidean_distance(p: &Vector2<f64>, q: &Vector2<f64>) -> f64 {
    ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt()
}

/// A landmark as seen in one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub camera: CameraId,
    pub global_id: u32,
    pub position: Vector2<f64>,
}

/// Landmarks of all cameras, grouped per camera and sorted by global id.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    per_camera: BTreeMap<CameraId, Vec<Landmark>>,
    image_sizes: BTreeMap<CameraId, (u32, u32)>,
}

impl LandmarkSet {
    pub fn new(
        entries: impl IntoIterator<Item = Landmark>,
        image_sizes: BTreeMap<CameraId, (u32, u32)>,
    ) -> Result<Self, VoronoiError> {
        let mut per_camera: BTreeMap<CameraId, Vec<Landmark>> = BTreeMap::new();
        for lm in entries {
            let &(width, height) = image_sizes.get(&lm.camera).ok_or(VoronoiError::UnknownCamera(lm.camera))?;
            let p = lm.position;
            if !(p.x >= 0.0 && p.y >= 0.0 && p.x < width as f64 && p.y < height as f64) {
                return Err(VoronoiError::OutOfFrame {
                    camera: lm.camera,
                    global_id: lm.global_id,
                    x: p.x,
                    y: p.y,
                    width,
                    height,
                });
            }
            per_camera.entry(lm.camera).or_default().push(lm);
        }
        for (camera, list) in per_camera.iter_mut() {
            list.sort_by_key(|l| l.global_id);
            for w in list.windows(2) {
                if w[0].global_id == w[1].global_id {
                    return Err(VoronoiError::DuplicateId { camera: *camera, global_id: w[0].global_id });
                }
            }
            for (i, a) in list.iter().enumerate() {
                for b in &list[i + 1..] {
                    if euclidean_distance(&a.position, &b.position) <= 1e-6 {
                        return Err(VoronoiError::Coincident { camera: *camera, a: a.global_id, b: b.global_id });
                    }
                }
            }
        }
        Ok(Self { per_camera, image_sizes })
    }

    pub fn landmarks(&self, camera: CameraId) -> &[Landmark] {
        self.per_camera.get(&camera).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn cameras(&self) -> impl Iterator<Item = CameraId> + '_ {
        self.per_camera.keys().copied()
    }

    pub fn image_size(&self, camera: CameraId) -> Option<(u32, u32)> {
        self.image_sizes.get(&camera).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Landmark> {
        self.per_camera.values().flatten()
    }

    /// Global id of the landmark nearest to `q` in `camera`'s view. Ties go to
    /// the smallest global id.
    pub fn nearest_landmark(&self, camera: CameraId, q: &Vector2<f64>) -> Result<u32, VoronoiError> {
        nearest_site(self.landmarks(camera), q).ok_or(VoronoiError::NoLandmarks(camera))
    }

    pub fn build_bounded_diagram(&self, camera: CameraId) -> Result<BoundedVoronoi, VoronoiError> {
        let (w, h) = self.image_size(camera).ok_or(VoronoiError::UnknownCamera(camera))?;
        let sites = self.landmarks(camera);
        if sites.is_empty() {
            return Err(VoronoiError::NoLandmarks(camera));
        }
        Ok(BoundedVoronoi::build(camera, sites, (w, h)))
    }
}

/// Sites must be sorted by global id for the tie rule to hold.
fn nearest_site(sites: &[Landmark], q: &Vector2<f64>) -> Option<u32> {
    // squared distance is monotone in the Euclidean distance and exact for
    // the equidistant case
    let mut best: Option<(f64, u32)> = None;
    for s in sites {
        let d = (s.position - q).norm_squared();
        match best {
            Some((bd, bid)) if d > bd || (d == bd && s.global_id > bid) => {}
            _ => best = Some((d, s.global_id)),
        }
    }
    best.map(|(_, id)| id)
}

/// A convex cell belonging to one real landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub global_id: u32,
    pub site: Vector2<f64>,
    /// Counter-clockwise (positive shoelace area) vertices clipped to the frame.
    pub polygon: Vec<Vector2<f64>>,
    /// Cell of the padded domain before clipping to the frame.
    pub unclipped: Vec<Vector2<f64>>,
}

impl Cell {
    pub fn area(&self) -> f64 {
        polygon_area(&self.polygon)
    }

    /// Inclusive point-in-cell test with tolerance `eps` in pixels.
    pub fn contains(&self, q: &Vector2<f64>, eps: f64) -> bool {
        convex_contains(&self.polygon, q, eps)
    }
}

/// Voronoi tessellation of one camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedVoronoi {
    pub camera: CameraId,
    pub image_size: (u32, u32),
    /// Padding added on each side, the frame diagonal.
    pub padding: f64,
    pub virtual_sites: Vec<Vector2<f64>>,
    pub cells: Vec<Cell>,
}

impl BoundedVoronoi {
    fn build(camera: CameraId, sites: &[Landmark], image_size: (u32, u32)) -> Self {
        let (w, h) = (image_size.0 as f64, image_size.1 as f64);
        let padding = (w * w + h * h).sqrt();
        let virtual_sites = virtual_sites(w, h, padding);

        let extent = 10.0 * (w + h + padding);
        let start = vec![
            Vector2::new(-extent, -extent),
            Vector2::new(extent, -extent),
            Vector2::new(extent, extent),
            Vector2::new(-extent, extent),
        ];
        let frame = rectangle(w, h);

        let cells = sites
            .iter()
            .map(|site| {
                let mut poly = start.clone();
                let others = sites
                    .iter()
                    .filter(|o| o.global_id != site.global_id)
                    .map(|o| o.position)
                    .chain(virtual_sites.iter().copied());
                for other in others {
                    poly = clip_bisector(&poly, &site.position, &other);
                    if poly.is_empty() {
                        break;
                    }
                }
                let mut clipped = poly.clone();
                for (a, b) in edges(&frame) {
                    clipped = clip_line(&clipped, &a, &b);
                }
                Cell { global_id: site.global_id, site: site.position, polygon: clipped, unclipped: poly }
            })
            .collect();

        Self { camera, image_size, padding, virtual_sites, cells }
    }

    /// Ids of all cells containing `q` (inclusive, tolerance `eps`).
    pub fn cells_containing(&self, q: &Vector2<f64>, eps: f64) -> Vec<u32> {
        self.cells.iter().filter(|c| c.contains(q, eps)).map(|c| c.global_id).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(Cell::area).sum()
    }

    /// Cell edges that are not part of the frame border, each reported once
    /// with its endpoints in lexicographic order.
    pub fn interior_edges(&self) -> Vec<(Vector2<f64>, Vector2<f64>)> {
        let (w, h) = (self.image_size.0 as f64, self.image_size.1 as f64);
        let on_border = |a: &Vector2<f64>, b: &Vector2<f64>| {
            let eps = 1e-7;
            (a.x.abs() < eps && b.x.abs() < eps)
                || ((a.x - w).abs() < eps && (b.x - w).abs() < eps)
                || (a.y.abs() < eps && b.y.abs() < eps)
                || ((a.y - h).abs() < eps && (b.y - h).abs() < eps)
        };
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for cell in &self.cells {
            for (a, b) in edges(&cell.polygon) {
                if on_border(&a, &b) || (a - b).norm() < 1e-9 {
                    continue;
                }
                let (a, b) = if grid_key(&a) <= grid_key(&b) { (a, b) } else { (b, a) };
                if seen.insert((grid_key(&a), grid_key(&b))) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Unique cell vertices (Voronoi vertices and frame intersections).
    pub fn vertices(&self) -> Vec<Vector2<f64>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for cell in &self.cells {
            for v in &cell.polygon {
                if seen.insert(grid_key(v)) {
                    out.push(*v);
                }
            }
        }
        out
    }

    /// SVG document with the frame, cell edges, vertices and landmark markers.
    pub fn render_overlay(&self) -> String {
        let (w, h) = self.image_size;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(svg, r#"  <title>camera {} landmark cells</title>"#, self.camera);
        let _ = writeln!(
            svg,
            r#"  <rect class="frame" x="0" y="0" width="{w}" height="{h}" fill="none" stroke="black" stroke-width="2"/>"#
        );
        for (a, b) in self.interior_edges() {
            let _ = writeln!(
                svg,
                r#"  <line class="edge" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="green" stroke-width="2"/>"#,
                px(a.x),
                px(a.y),
                px(b.x),
                px(b.y)
            );
        }
        for v in self.vertices() {
            let _ = writeln!(
                svg,
                r#"  <circle class="vertex" cx="{:.2}" cy="{:.2}" r="4" fill="blue"/>"#,
                px(v.x),
                px(v.y)
            );
        }
        for cell in &self.cells {
            let s = cell.site;
            let _ = writeln!(
                svg,
                r#"  <polygon class="landmark" data-id="{}" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="red"/>"#,
                cell.global_id,
                s.x,
                s.y - 8.0,
                s.x - 7.0,
                s.y + 6.0,
                s.x + 7.0,
                s.y + 6.0
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Four corners and three evenly spaced points on each side of the padded
/// rectangle `[-pad, w+pad] × [-pad, h+pad]`.
fn virtual_sites(w: f64, h: f64, pad: f64) -> Vec<Vector2<f64>> {
    let corners = [
        Vector2::new(-pad, -pad),
        Vector2::new(w + pad, -pad),
        Vector2::new(w + pad, h + pad),
        Vector2::new(-pad, h + pad),
    ];
    let per_side = VIRTUAL_SITE_COUNT / 4;
    let mut out = Vec::with_capacity(VIRTUAL_SITE_COUNT);
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        for k in 0..per_side {
            out.push(a + (b - a) * (k as f64 / per_side as f64));
        }
    }
    out
}

fn rectangle(w: f64, h: f64) -> Vec<Vector2<f64>> {
    vec![Vector2::new(0.0, 0.0), Vector2::new(w, 0.0), Vector2::new(w, h), Vector2::new(0.0, h)]
}

fn edges(poly: &[Vector2<f64>]) -> impl Iterator<Item = (Vector2<f64>, Vector2<f64>)> + '_ {
    (0..poly.len()).map(move |i| (poly[i], poly[(i + 1) % poly.len()]))
}

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    0.5 * edges(poly).map(|(a, b)| cross(&a, &b)).sum::<f64>()
}

fn convex_contains(poly: &[Vector2<f64>], q: &Vector2<f64>, eps: f64) -> bool {
    if poly.len() < 3 {
        return false;
    }
    edges(poly).all(|(a, b)| {
        let e = b - a;
        let len = e.norm();
        len == 0.0 || cross(&e, &(q - a)) / len >= -eps
    })
}

/// Keeps the part of the convex polygon closer to `site` than to `other`.
fn clip_bisector(poly: &[Vector2<f64>], site: &Vector2<f64>, other: &Vector2<f64>) -> Vec<Vector2<f64>> {
    let normal = other - site;
    let mid = (site + other) * 0.5;
    clip_halfplane(poly, |p| (p - mid).dot(&normal))
}

/// Keeps the part of the polygon to the left of the directed line `a → b`.
fn clip_line(poly: &[Vector2<f64>], a: &Vector2<f64>, b: &Vector2<f64>) -> Vec<Vector2<f64>> {
    let e = b - a;
    clip_halfplane(poly, |p| -cross(&e, &(p - a)))
}

/// Sutherland-Hodgman against `{p : f(p) <= 0}` for an affine `f`.
fn clip_halfplane(poly: &[Vector2<f64>], f: impl Fn(&Vector2<f64>) -> f64) -> Vec<Vector2<f64>> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let n = poly.len();
    for i in 0..n {
        let cur = poly[i];
        let next = poly[(i + 1) % n];
        let fc = f(&cur);
        let fn_ = f(&next);
        if fc <= 0.0 {
            out.push(cur);
        }
        if (fc < 0.0 && fn_ > 0.0) || (fc > 0.0 && fn_ < 0.0) {
            let t = fc / (fc - fn_);
            out.push(cur + (next - cur) * t);
        }
    }
    dedup_ring(out)
}

fn dedup_ring(mut poly: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    poly.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
    while poly.len() > 1 && (poly[0] - poly[poly.len() - 1]).norm() < 1e-12 {
        poly.pop();
    }
    if poly.len() < 3 {
        poly.clear();
    }
    poly
}

/// Rounds to two decimals without producing `-0.00`.
fn px(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Vertex identity on a 1e-6 px grid.
fn grid_key(v: &Vector2<f64>) -> (i64, i64) {
    ((v.x * 1e6).round() as i64, (v.y * 1e6).round() as i64)
}
