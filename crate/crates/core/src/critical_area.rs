//! Critical regions and the normal/strong consistency state machine.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec2;
use crate::EntityId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum ConsistencyMode {
    #[default]
    Normal,
    Strong,
}

impl ConsistencyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConsistencyMode::Normal => "normal",
            ConsistencyMode::Strong => "strong",
        }
    }
}

/// How much strong mode tightens the dead-reckoning threshold. The lag
/// reduction lives in [`LagPolicy`](crate::local_lag::LagPolicy).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongScales {
    pub threshold_scale: f64,
}

impl Default for StrongScales {
    fn default() -> Self {
        Self { threshold_scale: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionError {
    #[error("invalid region geometry: {0}")]
    InvalidGeometry(String),
    #[error("anchor entity {0} has no known position")]
    UnknownAnchor(EntityId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Rect {
        min: Vec2,
        max: Vec2,
    },
    Circle {
        center: Vec2,
        radius: f64,
    },
    /// A circle that follows an entity's latest known position.
    AnchoredCircle {
        anchor: EntityId,
        radius: f64,
    },
}

impl Region {
    pub fn validate(&self) -> Result<(), RegionError> {
        let radius_ok = |r: f64| r.is_finite() && r > 0.0;
        match *self {
            Region::Rect { min, max } => {
                if !(min.is_finite() && max.is_finite()) {
                    return Err(RegionError::InvalidGeometry("non-finite rectangle corner".into()));
                }
                if min.x > max.x || min.y > max.y {
                    return Err(RegionError::InvalidGeometry(format!(
                        "rectangle min {:?} exceeds max {:?}",
                        [min.x, min.y],
                        [max.x, max.y]
                    )));
                }
            }
            Region::Circle { center, radius } => {
                if !center.is_finite() || !radius_ok(radius) {
                    return Err(RegionError::InvalidGeometry(format!("circle radius {radius}")));
                }
            }
            Region::AnchoredCircle { radius, .. } => {
                if !radius_ok(radius) {
                    return Err(RegionError::InvalidGeometry(format!("circle radius {radius}")));
                }
            }
        }
        Ok(())
    }

    /// Inclusive containment test. Anchored circles look their anchor up in
    /// `positions`.
    pub fn contains(&self, point: Vec2, positions: &BTreeMap<EntityId, Vec2>) -> Result<bool, RegionError> {
        Ok(match *self {
            Region::Rect { min, max } => point.x >= min.x && point.x <= max.x && point.y >= min.y && point.y <= max.y,
            Region::Circle { center, radius } => point.distance(center) <= radius,
            Region::AnchoredCircle { anchor, radius } => {
                let center = positions.get(&anchor).ok_or(RegionError::UnknownAnchor(anchor))?;
                point.distance(*center) <= radius
            }
        })
    }
}

pub type RegionId = u32;

#[derive(Debug, Clone, Default)]
pub struct RegionSet {
    regions: Vec<(RegionId, Region)>,
}

impl RegionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a region and returns its id. Ids are assigned in order.
    pub fn set_region_coordinates(&mut self, region: Region) -> Result<RegionId, RegionError> {
        region.validate()?;
        let id = self.regions.len() as RegionId;
        self.regions.push((id, region));
        Ok(id)
    }

    pub fn get(&self, id: RegionId) -> Option<&Region> {
        self.regions.get(id as usize).map(|(_, r)| r)
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// True if any region contains `point`. Anchored circles whose anchor is
    /// not yet known are skipped.
    pub fn contains_any(&self, point: Vec2, positions: &BTreeMap<EntityId, Vec2>) -> bool {
        self.regions.iter().any(|(_, r)| r.contains(point, positions).unwrap_or(false))
    }
}

/// Normal/strong mode of one entity, with a dwell on exit.
///
/// Entering a region switches to strong at once; after leaving, strong mode
/// is held while `t - exit_time <= exit_hysteresis_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeTracker {
    exit_hysteresis_ms: u64,
    mode: ConsistencyMode,
    exited_at: Option<u64>,
}

impl ModeTracker {
    pub const DEFAULT_EXIT_HYSTERESIS_MS: u64 = 250;

    pub fn new(exit_hysteresis_ms: u64) -> Self {
        Self { exit_hysteresis_ms, mode: ConsistencyMode::Normal, exited_at: None }
    }

    pub fn mode(&self) -> ConsistencyMode {
        self.mode
    }

    /// Feeds one membership observation; returns the new mode and whether it changed.
    pub fn update(&mut self, inside: bool, t: u64) -> (ConsistencyMode, bool) {
        let before = self.mode;
        if inside {
            self.mode = ConsistencyMode::Strong;
            self.exited_at = None;
        } else if self.mode == ConsistencyMode::Strong {
            let exited = *self.exited_at.get_or_insert(t);
            if t.saturating_sub(exited) > self.exit_hysteresis_ms {
                self.mode = ConsistencyMode::Normal;
                self.exited_at = None;
            }
        }
        (self.mode, self.mode != before)
    }
}

impl Default for ModeTracker {
    fn default() -> Self {
        Self::new(Self::DEFAULT_EXIT_HYSTERESIS_MS)
    }
}

/// Mode of an entity at `entity_pos`, advancing its tracker to time `t`.
pub fn mode_for(
    entity_pos: Vec2,
    regions: &RegionSet,
    positions: &BTreeMap<EntityId, Vec2>,
    tracker: &mut ModeTracker,
    t: u64,
) -> ConsistencyMode {
    tracker.update(regions.contains_any(entity_pos, positions), t).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    #[test]
    fn region_registration() {
        let mut set = RegionSet::new();
        assert_eq!(set.set_region_coordinates(Region::Rect { min: v(90.0, -10.0), max: v(100.0, 10.0) }), Ok(0));
        assert!(matches!(
            set.set_region_coordinates(Region::Circle { center: v(0.0, 0.0), radius: 0.0 }),
            Err(RegionError::InvalidGeometry(_))
        ));
        assert!(matches!(
            set.set_region_coordinates(Region::Rect { min: v(1.0, 0.0), max: v(0.0, 1.0) }),
            Err(RegionError::InvalidGeometry(_))
        ));
        assert_eq!(set.set_region_coordinates(Region::AnchoredCircle { anchor: 3, radius: 5.0 }), Ok(1));

        let mut pos = BTreeMap::new();
        pos.insert(3, v(0.0, 0.0));
        assert!(set.contains_any(v(2.0, 2.0), &pos));
        pos.insert(3, v(50.0, 50.0));
        assert!(!set.contains_any(v(2.0, 2.0), &pos));
    }

    #[test]
    fn containment() {
        let none = BTreeMap::new();
        let rect = Region::Rect { min: v(0.0, 0.0), max: v(10.0, 10.0) };
        assert_eq!(rect.contains(v(5.0, 5.0), &none), Ok(true));
        assert_eq!(rect.contains(v(10.1, 5.0), &none), Ok(false));
        assert_eq!(rect.contains(v(10.0, 0.0), &none), Ok(true));
        let circle = Region::Circle { center: v(0.0, 0.0), radius: 2.0 };
        assert_eq!(circle.contains(v(0.0, 2.0), &none), Ok(true));

        let anchored = Region::AnchoredCircle { anchor: 3, radius: 5.0 };
        assert_eq!(anchored.contains(v(103.0, 4.0), &none), Err(RegionError::UnknownAnchor(3)));
        let mut pos = BTreeMap::new();
        pos.insert(3, v(100.0, 0.0));
        // 3-4-5 triangle, on the boundary.
        assert_eq!(anchored.contains(v(103.0, 4.0), &pos), Ok(true));
        assert_eq!(anchored.contains(v(103.0, 4.1), &pos), Ok(false));
    }

    #[test]
    fn mode_entry_and_exit_hysteresis() {
        let mut set = RegionSet::new();
        set.set_region_coordinates(Region::Rect { min: v(90.0, -10.0), max: v(100.0, 10.0) }).unwrap();
        let pos = BTreeMap::new();
        let mut tracker = ModeTracker::default();
        assert_eq!(mode_for(v(0.0, 0.0), &set, &pos, &mut tracker, 0), ConsistencyMode::Normal);
        assert_eq!(mode_for(v(95.0, 0.0), &set, &pos, &mut tracker, 500), ConsistencyMode::Strong);

        // Inside until 999, outside from 1000 on; step every ms.
        let mut trace = Vec::new();
        for t in 501..=1300 {
            let p = if t < 1000 { v(95.0, 0.0) } else { v(120.0, 0.0) };
            trace.push((t, mode_for(p, &set, &pos, &mut tracker, t)));
        }
        let last_strong = trace.iter().filter(|(_, m)| *m == ConsistencyMode::Strong).map(|(t, _)| *t).max();
        assert_eq!(last_strong, Some(1250));
        assert_eq!(trace.iter().find(|(t, _)| *t == 1251).unwrap().1, ConsistencyMode::Normal);
    }

    #[test]
    fn reentry_resets_exit_timer() {
        let mut tracker = ModeTracker::new(250);
        tracker.update(true, 0);
        tracker.update(false, 100);
        tracker.update(true, 200);
        tracker.update(false, 300);
        assert_eq!(tracker.update(false, 550), (ConsistencyMode::Strong, false));
        assert_eq!(tracker.update(false, 551), (ConsistencyMode::Normal, true));
    }
}
