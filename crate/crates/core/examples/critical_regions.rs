//! Region membership and the strong-mode tracker with exit hysteresis.

use std::collections::BTreeMap;

use sync_medium::critical_area::{ModeTracker, Region, RegionSet};
use sync_medium::Vec2;

fn main() {
    let mut regions = RegionSet::new();
    regions.set_region_coordinates(Region::Rect { min: Vec2::new(90.0, -10.0), max: Vec2::new(110.0, 10.0) }).unwrap();
    regions.set_region_coordinates(Region::AnchoredCircle { anchor: 5, radius: 20.0 }).unwrap();

    let mut positions = BTreeMap::new();
    positions.insert(5, Vec2::new(0.0, 50.0));

    let mut tracker = ModeTracker::new(ModeTracker::DEFAULT_EXIT_HYSTERESIS_MS);
    // A car crossing the finish area at 20 m/s.
    for t in (0..2000).step_by(100) {
        let pos = Vec2::new(80.0 + 20.0 * t as f64 / 1000.0, 0.0);
        let inside = regions.contains_any(pos, &positions);
        let (mode, changed) = tracker.update(inside, t);
        println!("t={t:4} x={:5.1} inside={inside:5} mode={}{}", pos.x, mode.as_str(), if changed { " *" } else { "" });
    }
    println!("near the anchored entity: {}", regions.contains_any(Vec2::new(10.0, 45.0), &positions));
}
