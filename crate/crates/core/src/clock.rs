//! Virtual time, one-way delay from timestamps, and smoothed latency estimates.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::pdu::{PingMessage, PongMessage};
use crate::ClientId;

/// Default smoothing factor, the usual RTT-smoothing gain of 1/8.
pub const DEFAULT_ALPHA: f64 = 0.125;

/// A monotone virtual clock with an optional per-client skew.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: u64,
    offset: i64,
}

impl VirtualClock {
    pub fn new(offset: i64) -> Self {
        Self { now: 0, offset }
    }

    /// Advances to `t`. Earlier values are ignored; the clock never goes back.
    pub fn advance_to(&mut self, t: u64) {
        self.now = self.now.max(t);
    }

    /// Global virtual time.
    pub fn now(&self) -> u64 {
        self.now
    }

    /// Time as seen by the skewed local clock, saturating at zero.
    pub fn local_now(&self) -> u64 {
        self.now.saturating_add_signed(self.offset)
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }
}

/// Result of a timestamp-based delay computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayReading {
    pub delay_ms: u64,
    /// Receive time preceded the send timestamp; the delay was clamped to zero.
    pub clock_anomaly: bool,
}

/// One-way delay of a message under synchronized clocks.
pub fn delay_from_timestamp(msg_timestamp: u64, receive_time: u64) -> DelayReading {
    match receive_time.checked_sub(msg_timestamp) {
        Some(d) => DelayReading { delay_ms: d, clock_anomaly: false },
        None => DelayReading { delay_ms: 0, clock_anomaly: true },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ProbeError {
    #[error("pong nonce {got:#x} does not match ping nonce {expected:#x}")]
    NonceMismatch { expected: u64, got: u64 },
}

/// One-way delay estimated as half the ping round trip, rounded half-up.
pub fn rtt_probe(ping: &PingMessage, pong: &PongMessage, receive_time: u64) -> Result<u64, ProbeError> {
    if ping.nonce != pong.nonce {
        return Err(ProbeError::NonceMismatch { expected: ping.nonce, got: pong.nonce });
    }
    let rtt = receive_time.saturating_sub(ping.timestamp);
    Ok(rtt / 2 + rtt % 2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaySample {
    pub peer_id: ClientId,
    pub delay_ms: f64,
    pub at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Smoothed {
    estimate: f64,
    samples: u64,
    last_at: u64,
}

/// Per-key exponentially weighted moving average of delay samples.
///
/// Keys are peers in the player manager, links in the overlay. A key with no
/// samples has no estimate, which is different from an estimate of zero.
#[derive(Debug, Clone)]
pub struct LatencyEstimator<K: Ord = ClientId> {
    alpha: f64,
    entries: BTreeMap<K, Smoothed>,
}

impl<K: Ord + Copy> LatencyEstimator<K> {
    /// # Panics
    ///
    /// If `alpha` is outside `(0, 1]`.
    pub fn new(alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1], got {alpha}");
        Self { alpha, entries: BTreeMap::new() }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Folds one sample in and returns the new estimate. Negative or
    /// non-finite samples are ignored.
    pub fn observe(&mut self, key: K, delay_ms: f64, at: u64) -> Option<f64> {
        if !(delay_ms.is_finite() && delay_ms >= 0.0) {
            return self.estimate(key);
        }
        let alpha = self.alpha;
        let entry = self
            .entries
            .entry(key)
            .and_modify(|s| {
                // Same as (1 - alpha) * e + alpha * s, but exact when s == e.
                s.estimate += alpha * (delay_ms - s.estimate);
                s.samples += 1;
                s.last_at = at;
            })
            .or_insert(Smoothed { estimate: delay_ms, samples: 1, last_at: at });
        Some(entry.estimate)
    }

    pub fn estimate(&self, key: K) -> Option<f64> {
        self.entries.get(&key).map(|s| s.estimate)
    }

    pub fn sample_count(&self, key: K) -> u64 {
        self.entries.get(&key).map_or(0, |s| s.samples)
    }

    pub fn last_sample_at(&self, key: K) -> Option<u64> {
        self.entries.get(&key).map(|s| s.last_at)
    }

    pub fn keys(&self) -> impl Iterator<Item = K> + '_ {
        self.entries.keys().copied()
    }
}

impl LatencyEstimator<ClientId> {
    pub fn observe_sample(&mut self, sample: DelaySample) -> Option<f64> {
        self.observe(sample.peer_id, sample.delay_ms, sample.at)
    }
}

impl<K: Ord + Copy> Default for LatencyEstimator<K> {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHA)
    }
}
