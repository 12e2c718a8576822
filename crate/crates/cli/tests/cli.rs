use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn birdtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_birdtrack")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = birdtrack(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn checksums(dir: &Path) -> BTreeMap<String, String> {
    let mut sums = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(std::fs::read(&path).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                sums.insert(path.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), hex);
            }
        }
    }
    sums
}

fn file_names(dir: &Path) -> BTreeSet<String> {
    std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect()
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    for name in ["a", "b"] {
        ok(&["synth", "-o", &p(name), "--seed", "9", "--duration", "1", "--render-frames"]);
    }
    ok(&["synth", "-o", &p("c"), "--seed", "10", "--duration", "1", "--render-frames"]);
    let a = checksums(&tmp.path().join("a"));
    assert!(a.keys().any(|k| k.starts_with("frames")));
    assert_eq!(a, checksums(&tmp.path().join("b")));
    assert_ne!(a, checksums(&tmp.path().join("c")));
}

#[test]
fn sixty_seconds_at_thirty_fps_is_1800_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("s");
    let stdout = ok(&["synth", "-o", dir.to_str().unwrap(), "--duration", "60", "--fps", "30", "--birds", "2"]);
    assert!(stdout.starts_with("1800 frames"), "{stdout}");
    let truth = std::fs::read_to_string(dir.join("truth.csv")).unwrap();
    let frames: BTreeSet<&str> = truth.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(frames.len(), 1800);
    assert_eq!(truth.lines().count(), 1 + 2 * 1800);
}

#[test]
fn missing_calibration_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere").join("calibration.json");
    let out = birdtrack(&[
        "run",
        "-i",
        tmp.path().to_str().unwrap(),
        "--calibration",
        missing.to_str().unwrap(),
        "-o",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(missing.to_str().unwrap()), "{stderr}");
}

#[test]
fn invalid_parameter_is_rejected_before_reading_inputs() {
    let out = birdtrack(&["run", "-i", "/nonexistent", "--ratio", "1.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("matching.ratio"));
}

#[test]
fn voronoi_overlay_stage_writes_only_svgs() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    ok(&["synth", "-o", &p("s"), "--duration", "0.2"]);
    ok(&["run", "-i", &p("s"), "-o", &p("out"), "--stage", "voronoi-overlay"]);
    let names = file_names(&tmp.path().join("out"));
    let expected: BTreeSet<String> = (1..=5).map(|c| format!("voronoi_cam{c}.svg")).collect();
    assert_eq!(names, expected);
}

#[test]
fn staged_commands_reproduce_the_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    ok(&["synth", "-o", &p("s"), "--duration", "1", "--seed", "4"]);
    ok(&["run", "-i", &p("s"), "-o", &p("full")]);
    ok(&["match", "-i", &p("s"), "-o", &p("staged")]);
    ok(&["reconstruct", "-i", &p("s"), "-o", &p("staged")]);
    ok(&["track", "-i", &p("s"), "-o", &p("staged")]);
    ok(&["eval", "-i", &p("s"), "-o", &p("staged")]);
    for f in ["matches.csv", "correspondences.csv", "tracks.csv"] {
        let a = std::fs::read(tmp.path().join("full").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("staged").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("staged/metrics.json")).unwrap()).unwrap();
    assert!(metrics["table3"]["Ratio correct final matches / all final matches"].is_number());
    assert!(metrics["table5"]["Total ID Switches"].is_number());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    ok(&["synth", "-o", &p("s"), "--duration", "0.5", "--ambiguity", "1"]);
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, format!(r#"{{"paths": {{"input_dir": "{}"}}, "stages": {{"rejection": false}}}}"#, p("s")))
        .unwrap();
    let off = ok(&["match", "--config", cfg.to_str().unwrap(), "-o", &p("o1")]);
    let on = ok(&["match", "--config", cfg.to_str().unwrap(), "-o", &p("o2"), "--no-ratio"]);
    let counts = |s: &str| -> (usize, usize) {
        let w: Vec<usize> = s.split_whitespace().filter_map(|t| t.trim_matches(',').parse().ok()).collect();
        (w[0], w[1])
    };
    let (all, kept) = counts(&off);
    assert_eq!(all, kept, "{off}");
    let (all_nr, _) = counts(&on);
    assert!(all_nr > all, "{on} vs {off}");
}

#[test]
fn mask_command_writes_masks_and_gated_keypoints() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    ok(&["synth", "-o", &p("s"), "--duration", "0.1", "--render-frames"]);
    let stdout = ok(&["mask", "-i", &p("s"), "-o", &p("out")]);
    assert!(stdout.contains("keypoints on mask"), "{stdout}");
    let names = file_names(&tmp.path().join("out/masks"));
    assert!(names.contains("keypoints_masked.csv"));
    assert!(names.iter().any(|n| n.starts_with("mask_cam1_frame0")));
    ok(&["run", "-i", &p("s"), "-o", &p("masked"), "--mask"]);
}
