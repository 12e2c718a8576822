use std::collections::BTreeMap;

use birdtrack::camera::{CameraModel, Distortion, Intrinsics};
use birdtrack::mask::{gate_keypoints, lateral_fill, BinaryMask, EdgeSet, PixelRegion};
use birdtrack::matcher::Keypoint;
use birdtrack::tracker::{associate, associate_optimal, TrackState, TrackerConfig};
use birdtrack::voronoi::{Landmark, LandmarkSet};
use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;

const W: u32 = 1920;
const H: u32 = 1080;

fn landmark_set(sites: &[(f64, f64)], size: (u32, u32)) -> Option<LandmarkSet> {
    let entries = sites
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Landmark { camera: 1, global_id: i as u32, position: Vector2::new(x, y) });
    LandmarkSet::new(entries, BTreeMap::from([(1, size)])).ok()
}

fn sites_strategy(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..W as f64, 0.0..H as f64), 1..=max)
}

fn camera(dist: [f64; 5], rvec: Vector3<f64>) -> CameraModel {
    CameraModel::from_rvec(
        1,
        Intrinsics { fx: 900.0, fy: 905.0, cx: 960.0, cy: 540.0 },
        Distortion::from_slice(&dist).unwrap(),
        rvec,
        Vector3::new(0.1, -0.2, 3.0),
        (W, H),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn undistort_inverts_distort(
        k1 in -0.3..0.3f64, k2 in -0.1..0.1f64, p1 in -0.01..0.01f64, p2 in -0.01..0.01f64,
        x in -0.5..0.5f64, y in -0.4..0.4f64,
    ) {
        let d = Distortion::from_slice(&[k1, k2, p1, p2, 0.0]).unwrap();
        let p = Vector2::new(x, y);
        prop_assert!((d.undistort(d.distort(p)) - p).norm() < 1e-9);
    }

    #[test]
    fn projection_round_trips_through_the_ideal_pinhole(
        k1 in -0.2..0.2f64, k2 in -0.05..0.05f64,
        rx in -0.3..0.3f64, ry in -0.3..0.3f64, rz in -3.0..3.0f64,
        px in -1.0..1.0f64, py in -0.6..0.6f64, pz in -1.0..1.0f64,
    ) {
        let cam = camera([k1, k2, 0.001, -0.001, 0.0], Vector3::new(rx, ry, rz));
        let x = Vector3::new(px, py, pz);
        let pixel = cam.project(&x).unwrap();
        let ideal = cam.projection_matrix().project(&x).unwrap();
        prop_assert!((cam.undistort_pixel(&pixel) - ideal).norm() < 1e-6);
    }

    #[test]
    fn voronoi_cells_partition_the_grid(sites in sites_strategy(30)) {
        let Some(set) = landmark_set(&sites, (W, H)) else { return Ok(()) };
        let v = set.build_bounded_diagram(1).unwrap();
        for gy in 0..64 {
            for gx in 0..64 {
                let q = Vector2::new((gx as f64 + 0.5) * W as f64 / 64.0, (gy as f64 + 0.5) * H as f64 / 64.0);
                let nearest = set.nearest_landmark(1, &q).unwrap();
                prop_assert!(v.cells_containing(&q, 1e-6).contains(&nearest));
            }
        }
        let area = (W * H) as f64;
        prop_assert!((v.total_area() - area).abs() <= 1e-6 * area);
    }

    #[test]
    fn nearest_landmark_is_translation_equivariant(
        sites in prop::collection::vec((0u32..900, 0u32..500), 1..12),
        dx in 0u32..900, dy in 0u32..500,
        queries in prop::collection::vec((0u32..900, 0u32..500), 1..40),
    ) {
        let base: Vec<(f64, f64)> = sites.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
        let moved: Vec<(f64, f64)> = base.iter().map(|&(x, y)| (x + dx as f64, y + dy as f64)).collect();
        let (Some(a), Some(b)) = (landmark_set(&base, (W, H)), landmark_set(&moved, (W, H))) else { return Ok(()) };
        for &(qx, qy) in &queries {
            let q = Vector2::new(qx as f64, qy as f64);
            let shifted = q + Vector2::new(dx as f64, dy as f64);
            prop_assert_eq!(a.nearest_landmark(1, &q).unwrap(), b.nearest_landmark(1, &shifted).unwrap());
        }
    }

    #[test]
    fn every_cell_is_bounded_and_inside_the_frame(sites in sites_strategy(30)) {
        let Some(set) = landmark_set(&sites, (W, H)) else { return Ok(()) };
        let v = set.build_bounded_diagram(1).unwrap();
        prop_assert_eq!(v.cells.len(), set.landmarks(1).len());
        for c in &v.cells {
            prop_assert!(c.polygon.len() >= 3);
            for p in &c.polygon {
                prop_assert!(p.x.is_finite() && p.y.is_finite());
                prop_assert!(p.x >= -1e-9 && p.x <= W as f64 + 1e-9 && p.y >= -1e-9 && p.y <= H as f64 + 1e-9);
            }
        }
    }

    #[test]
    fn lateral_fill_is_monotone_and_idempotent(
        edges in prop::collection::vec((0u32..40, 0u32..30), 0..80),
        extra in prop::collection::vec((0u32..40, 0u32..30), 0..20),
    ) {
        let region = PixelRegion { x0: 0, y0: 0, x1: 40, y1: 30 };
        let small = lateral_fill(&EdgeSet::from_pixels(edges.clone()), region);
        let mut all = edges;
        all.extend(extra);
        let big = lateral_fill(&EdgeSet::from_pixels(all), region);
        for y in 0..30 {
            for x in 0..40 {
                prop_assert!(!small.get(x, y) || big.get(x, y));
            }
        }
        let on: Vec<(u32, u32)> =
            (0..30).flat_map(|y| (0..40).map(move |x| (x, y))).filter(|&(x, y)| small.get(x, y)).collect();
        prop_assert_eq!(lateral_fill(&EdgeSet::from_pixels(on), region), small);
    }

    #[test]
    fn gating_keeps_an_ordered_subsequence(
        on in prop::collection::vec((0u32..50, 0u32..50), 0..300),
        points in prop::collection::vec((-2.0..52.0f64, -2.0..52.0f64), 0..60),
    ) {
        let mut mask = BinaryMask::new(50, 50);
        for &(x, y) in &on {
            mask.set(x, y, true);
        }
        let kps: Vec<Keypoint> = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Keypoint {
                camera: 1,
                frame: 0,
                index: i as u32,
                detection_index: 0,
                position: Vector2::new(x, y),
                descriptor: vec![0.0],
            })
            .collect();
        let kept = gate_keypoints(&mask, &kps);
        let mut it = kps.iter();
        for k in &kept {
            prop_assert!(it.any(|o| o == k));
            let (x, y) = ((k.position.x + 0.5).floor() as u32, (k.position.y + 0.5).floor() as u32);
            prop_assert!(mask.get(x, y));
        }
    }

    #[test]
    fn association_is_one_to_one_within_the_gate(
        tracks in prop::collection::vec((0.0..3.0f64, 0.0..3.0f64, 0.0..3.0f64), 0..8),
        obs in prop::collection::vec((0.0..3.0f64, 0.0..3.0f64, 0.0..3.0f64), 0..8),
        gate in 0.1..1.5f64,
    ) {
        let t: Vec<Vector3<f64>> = tracks.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
        let o: Vec<Vector3<f64>> = obs.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
        for a in [associate(&t, &o, gate), associate_optimal(&t, &o, gate)] {
            let mut seen_t = vec![false; t.len()];
            let mut seen_o = vec![false; o.len()];
            for &(i, j) in &a.pairs {
                prop_assert!((t[i] - o[j]).norm() <= gate);
                prop_assert!(!seen_t[i] && !seen_o[j]);
                seen_t[i] = true;
                seen_o[j] = true;
            }
            prop_assert_eq!(a.pairs.len() + a.unmatched_tracks.len(), t.len());
            prop_assert_eq!(a.pairs.len() + a.unmatched_observations.len(), o.len());
        }
    }

    #[test]
    fn covariance_stays_symmetric_positive_definite(
        zs in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..40),
    ) {
        let cfg = TrackerConfig::default();
        let dt = 1.0 / cfg.fps;
        let r: Matrix3<f64> = cfg.measurement_covariance();
        let mut s = TrackState::new(1, 0, Vector3::zeros(), &cfg);
        for &(x, y, z) in &zs {
            s = s.predict(dt, cfg.sigma_jerk).update(&Vector3::new(x, y, z), &r).unwrap();
            let p = s.covariance;
            prop_assert!((p - p.transpose()).abs().max() <= 1e-9 * p.abs().max());
            prop_assert!(p.symmetric_eigenvalues().min() > 0.0);
        }
    }
}
