use std::collections::BTreeMap;
use std::path::Path;

use birdtrack::voronoi::{Landmark, LandmarkSet};
use nalgebra::Vector2;

fn overlay() -> String {
    let sites = [(3, 400.0, 300.0), (7, 1500.0, 250.0), (11, 900.0, 800.0), (12, 200.0, 1000.0)];
    let set = LandmarkSet::new(
        sites.iter().map(|&(id, x, y)| Landmark { camera: 2, global_id: id, position: Vector2::new(x, y) }),
        BTreeMap::from([(2, (1920, 1080))]),
    )
    .unwrap();
    set.build_bounded_diagram(2).unwrap().render_overlay()
}

/// Set `UPDATE_GOLDEN=1` to rewrite the reference after an intended change.
#[test]
fn overlay_matches_golden_file() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/voronoi_four_sites.svg");
    let svg = overlay();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &svg).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap();
    assert_eq!(svg, golden);
}

#[test]
fn overlay_structure() {
    let svg = overlay();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(svg.contains("viewBox=\"0 0 1920 1080\""));
    assert_eq!(svg.matches("class=\"landmark\"").count(), 4);
    assert_eq!(svg.matches("class=\"edge\"").count(), 5);
    assert!(!svg.contains("-0.00"));
}
