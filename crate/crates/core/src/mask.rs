//! Bird masks from detection boxes.
//!
//! Inside every detection box the frame is run through a Canny edge detector;
//! each row of the box is then filled between its leftmost and rightmost edge
//! pixel. Keypoints are kept only where the resulting mask is on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matcher::Keypoint;

pub const DEFAULT_CANNY_LOW: f64 = 50.0;
pub const DEFAULT_CANNY_HIGH: f64 = 150.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("region is empty after clamping to the frame")]
    EmptyRegion,
    #[error("invalid thresholds low={low}, high={high}")]
    InvalidThresholds { low: f64, high: f64 },
    #[error("frame has {got} pixels, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
}

/// 8-bit grayscale frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayFrame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(MaskError::SizeMismatch { expected, got: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self { width, height, pixels: vec![value; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = value;
    }
}

/// Bounding box in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn center(&self) -> nalgebra::Vector2<f64> {
        nalgebra::Vector2::new((self.x_min + self.x_max) * 0.5, (self.y_min + self.y_max) * 0.5)
    }

    pub fn contains(&self, p: &nalgebra::Vector2<f64>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        w.max(0.0) * h.max(0.0)
    }
}

/// Integer pixel region `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRegion {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRegion {
    /// Pixels whose centers fall inside the box, clamped to the frame.
    pub fn from_box(bbox: &BoundingBox, width: u32, height: u32) -> Self {
        let clamp = |v: f64, hi: u32| v.clamp(0.0, hi as f64) as u32;
        let x0 = clamp((bbox.x_min - 0.5).ceil(), width);
        let y0 = clamp((bbox.y_min - 0.5).ceil(), height);
        let x1 = clamp((bbox.x_max - 0.5).floor() + 1.0, width);
        let y1 = clamp((bbox.y_max - 0.5).floor() + 1.0, height);
        Self { x0, y0, x1: x1.max(x0), y1: y1.max(y0) }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Boolean mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn all_on(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![true; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = on;
    }

    pub fn count_on(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Mask as 8-bit intensities {0, 255}.
    pub fn to_gray(&self) -> GrayFrame {
        GrayFrame {
            width: self.width,
            height: self.height,
            pixels: self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect(),
        }
    }
}

/// Edge pixels in frame coordinates, sorted by `(y, x)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EdgeSet {
    pub pixels: Vec<(u32, u32)>,
}

impl EdgeSet {
    pub fn from_pixels(mut pixels: Vec<(u32, u32)>) -> Self {
        pixels.sort_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        Self { pixels }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

const GAUSS_SIGMA: f64 = 1.4;

fn gaussian_kernel() -> [f64; 5] {
    let mut k = [0.0; 5];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *v = (-d * d / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|v| v / sum)
}

/// Canny edges inside `region`: 5×5 Gaussian (σ = 1.4, separable), Sobel
/// gradients, non-maximum suppression along the gradient direction quantized
/// to 45°, and hysteresis with 8-connectivity. Borders of the region are
/// replicated.
pub fn canny_edges(frame: &GrayFrame, region: PixelRegion, low: f64, high: f64) -> Result<EdgeSet, MaskError> {
    if !(0.0..=255.0).contains(&low) || !(0.0..=255.0).contains(&high) || low > high {
        return Err(MaskError::InvalidThresholds { low, high });
    }
    let region = PixelRegion {
        x0: region.x0.min(frame.width),
        y0: region.y0.min(frame.height),
        x1: region.x1.min(frame.width),
        y1: region.y1.min(frame.height),
    };
    if region.is_empty() {
        return Err(MaskError::EmptyRegion);
    }
    let (w, h) = (region.width() as usize, region.height() as usize);
    let at = |img: &[f64], x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        img[yc * w + xc]
    };

    let src: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| frame.get(region.x0 + x as u32, region.y0 + y as u32) as f64)
        .collect();

    let kernel = gaussian_kernel();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (0..5).map(|k| kernel[k] * at(&src, x as isize + k as isize - 2, y as isize)).sum();
        }
    }
    let mut smooth = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            smooth[y * w + x] = (0..5).map(|k| kernel[k] * at(&tmp, x as isize, y as isize + k as isize - 2)).sum();
        }
    }

    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| at(&smooth, x + dx, y + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y as usize * w + x as usize;
            mag[i] = (gx * gx + gy * gy).sqrt();
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            dir[i] = if !(22.5..157.5).contains(&angle) {
                0
            } else if angle < 67.5 {
                1
            } else if angle < 112.5 {
                2
            } else {
                3
            };
        }
    }

    // neighbor offsets along the gradient for each quantized direction
    let offsets: [(isize, isize); 4] = [(1, 0), (1, 1), (0, 1), (-1, 1)];
    let mag_at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut nms = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let (dx, dy) = offsets[dir[i] as usize];
            let forward = mag_at(x + dx, y + dy);
            let backward = mag_at(x - dx, y - dy);
            if m > forward && m >= backward {
                nms[i] = m;
            }
        }
    }

    // hysteresis
    let mut state = vec![0u8; w * h]; // 0 none, 1 weak, 2 strong
    let mut stack = Vec::new();
    for i in 0..w * h {
        if nms[i] >= high && nms[i] > 0.0 {
            state[i] = 2;
            stack.push(i);
        } else if nms[i] >= low && nms[i] > 0.0 {
            state[i] = 1;
        }
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if state[j] == 1 {
                    state[j] = 2;
                    stack.push(j);
                }
            }
        }
    }

    let pixels = (0..w * h)
        .filter(|&i| state[i] == 2)
        .map(|i| (region.x0 + (i % w) as u32, region.y0 + (i / w) as u32))
        .collect();
    Ok(EdgeSet::from_pixels(pixels))
}

/// Region-local mask: in every row, pixels between the leftmost and rightmost
/// edge pixel (inclusive) are on. Edge pixels outside the region are ignored.
pub fn lateral_fill(edges: &EdgeSet, region: PixelRegion) -> BinaryMask {
    let mut mask = BinaryMask::new(region.width(), region.height());
    let mut extremes: Vec<Option<(u32, u32)>> = vec![None; region.height() as usize];
    for &(x, y) in &edges.pixels {
        if !region.contains(x, y) {
            continue;
        }
        let slot = &mut extremes[(y - region.y0) as usize];
        *slot = Some(match *slot {
            None => (x, x),
            Some((lo, hi)) => (lo.min(x), hi.max(x)),
        });
    }
    for (row, ext) in extremes.iter().enumerate() {
        if let Some((lo, hi)) = ext {
            for x in *lo..=*hi {
                mask.set(x - region.x0, row as u32, true);
            }
        }
    }
    mask
}

/// Frame-sized mask: union of the filled Canny edges of every box.
pub fn build_mask(frame: &GrayFrame, boxes: &[BoundingBox], low: f64, high: f64) -> Result<BinaryMask, MaskError> {
    let mut mask = BinaryMask::new(frame.width, frame.height);
    for bbox in boxes {
        let region = PixelRegion::from_box(bbox, frame.width, frame.height);
        if region.is_empty() {
            continue;
        }
        let edges = canny_edges(frame, region, low, high)?;
        let local = lateral_fill(&edges, region);
        for y in 0..region.height() {
            for x in 0..region.width() {
                if local.get(x, y) {
                    mask.set(region.x0 + x, region.y0 + y, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Pixel a keypoint falls on: round half up on each axis.
pub fn keypoint_pixel(x: f64, y: f64) -> Option<(u32, u32)> {
    let (px, py) = ((x + 0.5).floor(), (y + 0.5).floor());
    (px >= 0.0 && py >= 0.0 && px < u32::MAX as f64 && py < u32::MAX as f64).then_some((px as u32, py as u32))
}

/// Keeps keypoints whose rounded pixel is on, preserving order.
pub fn gate_keypoints(mask: &BinaryMask, keypoints: &[Keypoint]) -> Vec<Keypoint> {
    keypoints
        .iter()
        .filter(|k| keypoint_pixel(k.position.x, k.position.y).is_some_and(|(x, y)| mask.get(x, y)))
        .cloned()
        .collect()
}
