//! First-order dead reckoning: extrapolation of remote entities, the
//! threshold rule that gates local transmissions, and linear convergence
//! toward a corrected trajectory.

use thiserror::Error;

use crate::geom::Vec2;

/// Position and velocity of an entity at a virtual-time instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntityKinematics {
    pub pos: Vec2,
    pub vel: Vec2,
    pub at: u64,
}

impl EntityKinematics {
    pub fn new(pos: Vec2, vel: Vec2, at: u64) -> Self {
        Self { pos, vel, at }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.is_finite() && self.vel.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DeadReckoningError {
    #[error("prediction requested at {t} ms, before the sample taken at {sample_at} ms")]
    TimeBeforeSample { t: u64, sample_at: u64 },
    #[error("threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadReckoningPolicy {
    /// Positional error, in meters, at which a fresh update is sent.
    pub threshold_m: f64,
    /// Duration of the blend from the displayed position to a correction.
    pub convergence_ms: u64,
}

impl DeadReckoningPolicy {
    pub const DEFAULT_THRESHOLD_M: f64 = 0.5;
    pub const DEFAULT_CONVERGENCE_MS: u64 = 200;

    pub fn new(threshold_m: f64, convergence_ms: u64) -> Result<Self, DeadReckoningError> {
        if !(threshold_m.is_finite() && threshold_m > 0.0) {
            return Err(DeadReckoningError::InvalidThreshold(threshold_m));
        }
        Ok(Self { threshold_m, convergence_ms })
    }

    /// The same policy with the threshold multiplied by `scale`.
    pub fn tightened(self, scale: f64) -> Self {
        Self { threshold_m: self.threshold_m * scale, ..self }
    }
}

impl Default for DeadReckoningPolicy {
    fn default() -> Self {
        Self { threshold_m: Self::DEFAULT_THRESHOLD_M, convergence_ms: Self::DEFAULT_CONVERGENCE_MS }
    }
}

/// Extrapolates `last` to time `t` assuming constant velocity.
pub fn predict(last: &EntityKinematics, t: u64) -> Result<Vec2, DeadReckoningError> {
    if t < last.at {
        return Err(DeadReckoningError::TimeBeforeSample { t, sample_at: last.at });
    }
    Ok(extrapolate(last, t))
}

// Callers guarantee t >= last.at or accept a backwards extrapolation.
fn extrapolate(last: &EntityKinematics, t: u64) -> Vec2 {
    let dt = (t as f64 - last.at as f64) / 1000.0;
    last.pos + last.vel * dt
}

/// Transmission rule for a locally owned entity.
///
/// Sends when nothing was sent yet, when the heartbeat interval has elapsed,
/// or when the receivers' extrapolation of the last sent state has drifted
/// from `actual` by at least the threshold.
pub fn should_send(
    actual: &EntityKinematics,
    last_sent: Option<&EntityKinematics>,
    policy: &DeadReckoningPolicy,
    heartbeat_ms: u64,
    t: u64,
) -> bool {
    let Some(last) = last_sent else {
        return true;
    };
    if t.saturating_sub(last.at) >= heartbeat_ms {
        return true;
    }
    prediction_error(actual, last, t) >= policy.threshold_m
}

/// Distance between the true position at `t` and the extrapolation of `last_sent`.
pub fn prediction_error(actual: &EntityKinematics, last_sent: &EntityKinematics, t: u64) -> f64 {
    let truth = extrapolate(actual, t);
    truth.distance(extrapolate(last_sent, t.max(last_sent.at)))
}

/// Displayed position during a correction that began at `started_at` from
/// position `from`.
///
/// Blends linearly toward the extrapolation of `corrected` and lands on it
/// exactly once the convergence window has elapsed. A zero window snaps.
pub fn converge(
    from: Vec2,
    started_at: u64,
    corrected: &EntityKinematics,
    policy: &DeadReckoningPolicy,
    t: u64,
) -> Vec2 {
    let target = extrapolate(corrected, t.max(corrected.at));
    let elapsed = t.saturating_sub(started_at);
    if policy.convergence_ms == 0 || elapsed >= policy.convergence_ms {
        return target;
    }
    from.lerp(target, elapsed as f64 / policy.convergence_ms as f64)
}

/// Receiver-side view of one remote entity: the newest applied state and
/// the correction currently being blended in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemoteTrack {
    latest: EntityKinematics,
    from: Vec2,
    started_at: u64,
}

impl RemoteTrack {
    /// Starts a track by snapping to the first known state.
    pub fn new(first: EntityKinematics, now: u64) -> Self {
        let from = extrapolate(&first, now.max(first.at));
        Self { latest: first, from, started_at: now }
    }

    /// Installs a newer state, starting a correction from the current display.
    /// States older than, or identical to, the one already held are ignored.
    pub fn correct(&mut self, state: EntityKinematics, policy: &DeadReckoningPolicy, now: u64) -> bool {
        if state.at < self.latest.at || state == self.latest {
            return false;
        }
        self.from = self.displayed(policy, now);
        self.started_at = now;
        self.latest = state;
        true
    }

    pub fn displayed(&self, policy: &DeadReckoningPolicy, t: u64) -> Vec2 {
        converge(self.from, self.started_at, &self.latest, policy, t)
    }

    pub fn is_converging(&self, policy: &DeadReckoningPolicy, t: u64) -> bool {
        t < self.started_at + policy.convergence_ms
    }

    pub fn latest(&self) -> &EntityKinematics {
        &self.latest
    }
}
