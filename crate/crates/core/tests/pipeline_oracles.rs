//! Whole-pipeline checks against independently counted expectations.

use std::collections::BTreeMap;

use birdtrack::config::PipelineConfig;
use birdtrack::metrics::rejection_stats;
use birdtrack::pipeline::{process_frames, Inputs};
use birdtrack::synthworld::{generate, truth_labels, SceneConfig};
use birdtrack::{CameraId, FrameIndex};

fn inputs(scene: &SceneConfig) -> (birdtrack::synthworld::Dataset, Inputs) {
    let d = generate(scene).unwrap();
    let inputs = Inputs {
        cameras: d.camera_map(),
        landmarks: d.landmark_set().unwrap(),
        detections: d.detections.clone(),
        keypoints: d.keypoints.clone(),
    };
    (d, inputs)
}

/// With every bird wearing the same descriptors the nearest neighbor of a
/// keypoint is a uniformly random copy, so pre-rejection precision is the
/// share of same-identity keypoints in the target view, averaged over source
/// keypoints. The share is counted exhaustively from the emission tally.
#[test]
fn identical_birds_match_at_chance_before_rejection() {
    let scene = SceneConfig { ambiguity: 1.0, duration_s: 2.0, seed: 11, ..SceneConfig::default() };
    let (d, inputs) = inputs(&scene);
    let mut config = PipelineConfig::default();
    config.matching.ratio = None;
    let frames: Vec<FrameIndex> = (0..d.frame_count()).collect();
    let out = process_frames(&inputs, &config, &frames).unwrap();
    let matches: Vec<_> = out.iter().flat_map(|f| f.matches.iter().cloned()).collect();
    let measured = rejection_stats(&matches, &truth_labels(&d)).unwrap().initial_precision;

    let mut per_view: BTreeMap<(CameraId, FrameIndex), BTreeMap<u32, usize>> = BTreeMap::new();
    for (&(cam, frame, id), &n) in &d.keypoint_tally {
        per_view.entry((cam, frame)).or_default().insert(id, n);
    }
    let ids: Vec<CameraId> = d.cameras.iter().map(|c| c.id()).collect();
    let (mut hits, mut total) = (0.0, 0.0);
    for frame in frames {
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let (Some(va), Some(vb)) = (per_view.get(&(a, frame)), per_view.get(&(b, frame))) else { continue };
                let nb: usize = vb.values().sum();
                for (id, &na) in va {
                    hits += na as f64 * *vb.get(id).unwrap_or(&0) as f64 / nb as f64;
                    total += na as f64;
                }
            }
        }
    }
    let expected = hits / total;
    assert!((measured - expected).abs() < 0.03, "measured {measured:.4}, counted {expected:.4}");
    assert!(expected < 0.3, "{expected}");
}

#[test]
fn distinct_birds_match_almost_perfectly() {
    let scene = SceneConfig { duration_s: 1.0, seed: 5, ..SceneConfig::default() };
    let (d, inputs) = inputs(&scene);
    let frames: Vec<FrameIndex> = (0..d.frame_count()).collect();
    let out = process_frames(&inputs, &PipelineConfig::default(), &frames).unwrap();
    let matches: Vec<_> = out.iter().flat_map(|f| f.matches.iter().cloned()).collect();
    let r = rejection_stats(&matches, &truth_labels(&d)).unwrap();
    assert!(r.initial_precision > 0.99, "{}", r.initial_precision);
    assert!(out.iter().all(|f| !f.reconstruction.observations.is_empty()));
}

#[test]
fn frame_results_do_not_depend_on_thread_count() {
    let scene = SceneConfig { duration_s: 1.0, seed: 3, ambiguity: 0.5, ..SceneConfig::default() };
    let (d, inputs) = inputs(&scene);
    let frames: Vec<FrameIndex> = (0..d.frame_count()).collect();
    let run = |threads| {
        let config = PipelineConfig { threads, ..PipelineConfig::default() };
        let out = process_frames(&inputs, &config, &frames).unwrap();
        out.into_iter().map(|f| (f.frame, f.matches, f.correspondences)).collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(4));
}
