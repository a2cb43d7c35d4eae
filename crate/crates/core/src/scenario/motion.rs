//! Closed-form bot motion: position and velocity as functions of virtual time.

use serde::Deserialize;

use crate::dead_reckoning::EntityKinematics;
use crate::geom::Vec2;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    Static {
        pos: Vec2,
    },
    ConstantVelocity {
        start: Vec2,
        /// m/s.
        vel: Vec2,
    },
    /// Straight segments between points. `speeds` gives one speed per
    /// segment and overrides `speed`. A looped path closes back to the
    /// first point; an open one stops at the last.
    Waypoints {
        points: Vec<Vec2>,
        #[serde(default)]
        speed: Option<f64>,
        #[serde(default)]
        speeds: Vec<f64>,
        #[serde(default, rename = "loop")]
        looped: bool,
    },
}

struct Segment {
    from: Vec2,
    to: Vec2,
    start_ms: f64,
    dur_ms: f64,
}

impl Motion {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Motion::Static { pos } => finite(*pos),
            Motion::ConstantVelocity { start, vel } => finite(*start).and(finite(*vel)),
            Motion::Waypoints { points, speed, speeds, looped } => {
                if points.len() < 2 {
                    return Err("a path needs at least two points".into());
                }
                points.iter().try_for_each(|p| finite(*p))?;
                let n = if *looped { points.len() } else { points.len() - 1 };
                if speeds.is_empty() && speed.is_none() {
                    return Err("give speed or speeds".into());
                }
                if !speeds.is_empty() && speeds.len() != n {
                    return Err(format!("{} speeds for {n} segments", speeds.len()));
                }
                let all: Vec<f64> = if speeds.is_empty() { vec![speed.unwrap_or(0.0)] } else { speeds.clone() };
                if all.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err("speeds must be positive".into());
                }
                if self.segments().iter().any(|s| s.dur_ms == 0.0) {
                    return Err("consecutive points must differ".into());
                }
                Ok(())
            }
        }
    }

    fn segments(&self) -> Vec<Segment> {
        let Motion::Waypoints { points, speed, speeds, looped } = self else {
            return Vec::new();
        };
        let n = if *looped { points.len() } else { points.len() - 1 };
        let mut start_ms = 0.0;
        (0..n)
            .map(|i| {
                let from = points[i];
                let to = points[(i + 1) % points.len()];
                let v = speeds.get(i).copied().or(*speed).unwrap_or(1.0);
                let seg = Segment { from, to, start_ms, dur_ms: from.distance(to) / v * 1000.0 };
                start_ms += seg.dur_ms;
                seg
            })
            .collect()
    }

    /// Ground truth at virtual time `t`.
    pub fn at(&self, t: u64) -> EntityKinematics {
        match self {
            Motion::Static { pos } => EntityKinematics::new(*pos, Vec2::ZERO, t),
            Motion::ConstantVelocity { start, vel } => {
                EntityKinematics::new(*start + *vel * (t as f64 / 1000.0), *vel, t)
            }
            Motion::Waypoints { looped, .. } => {
                let segs = self.segments();
                let total: f64 = segs.iter().map(|s| s.dur_ms).sum();
                let mut local = t as f64;
                if *looped {
                    local %= total;
                } else if local >= total {
                    let last = segs.last().expect("validated path");
                    return EntityKinematics::new(last.to, Vec2::ZERO, t);
                }
                let seg = segs.iter().rev().find(|s| s.start_ms <= local).unwrap_or(&segs[0]);
                let frac = (local - seg.start_ms) / seg.dur_ms;
                let vel = (seg.to - seg.from) * (1000.0 / seg.dur_ms);
                EntityKinematics::new(seg.from.lerp(seg.to, frac), vel, t)
            }
        }
    }

    /// Largest speed the motion ever reaches, in m/s.
    pub fn max_speed(&self) -> f64 {
        match self {
            Motion::Static { .. } => 0.0,
            Motion::ConstantVelocity { vel, .. } => vel.length(),
            Motion::Waypoints { .. } => {
                self.segments().iter().map(|s| s.from.distance(s.to) / s.dur_ms * 1000.0).fold(0.0, f64::max)
            }
        }
    }
}

fn finite(v: Vec2) -> Result<(), String> {
    if v.is_finite() {
        Ok(())
    } else {
        Err("coordinates must be finite".into())
    }
}
