//! Local lag: messages are held until `timestamp + lag` so that every client
//! plays them out at the same virtual time.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::critical_area::ConsistencyMode;
use crate::pdu::{EventMessage, StateUpdate};
use crate::{ClientId, EntityId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LagError {
    #[error("local lag must be non-negative, got {0} ms")]
    NegativeLag(i64),
    #[error("critical lag scale must lie in (0, 1], got {0}")]
    InvalidScale(f64),
}

/// Per-object-class lag values and the strong-mode reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct LagPolicy {
    lags: BTreeMap<String, u64>,
    default_lag_ms: u64,
    critical_scale: f64,
}

impl LagPolicy {
    pub const DEFAULT_CRITICAL_SCALE: f64 = 0.5;

    pub fn new(default_lag_ms: u64, critical_scale: f64) -> Result<Self, LagError> {
        if !(critical_scale > 0.0 && critical_scale <= 1.0) {
            return Err(LagError::InvalidScale(critical_scale));
        }
        Ok(Self { lags: BTreeMap::new(), default_lag_ms, critical_scale })
    }

    /// Sets the lag for one object class. Entries already buffered keep the
    /// due time they were given.
    pub fn set_local_lag_value(&mut self, class: &str, lag_ms: i64) -> Result<(), LagError> {
        let lag = u64::try_from(lag_ms).map_err(|_| LagError::NegativeLag(lag_ms))?;
        self.lags.insert(class.to_owned(), lag);
        Ok(())
    }

    /// Base lag of a class; classes never configured use the default.
    pub fn base_lag(&self, class: &str) -> u64 {
        self.lags.get(class).copied().unwrap_or(self.default_lag_ms)
    }

    pub fn critical_scale(&self) -> f64 {
        self.critical_scale
    }

    pub fn effective_lag(&self, class: &str, mode: ConsistencyMode) -> u64 {
        let base = self.base_lag(class);
        match mode {
            ConsistencyMode::Normal => base,
            ConsistencyMode::Strong => (base as f64 * self.critical_scale).round() as u64,
        }
    }
}

impl Default for LagPolicy {
    fn default() -> Self {
        Self { lags: BTreeMap::new(), default_lag_ms: 0, critical_scale: Self::DEFAULT_CRITICAL_SCALE }
    }
}

/// Messages subject to playout timing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Playable {
    State(StateUpdate),
    Event(EventMessage),
}

impl Playable {
    pub fn sender_id(&self) -> ClientId {
        match self {
            Playable::State(m) => m.sender_id,
            Playable::Event(m) => m.sender_id,
        }
    }

    pub fn entity_id(&self) -> EntityId {
        match self {
            Playable::State(m) => m.entity_id,
            Playable::Event(m) => m.entity_id,
        }
    }

    pub fn seq(&self) -> u32 {
        match self {
            Playable::State(m) => m.seq,
            Playable::Event(m) => m.seq,
        }
    }

    pub fn timestamp(&self) -> u64 {
        match self {
            Playable::State(m) => m.timestamp,
            Playable::Event(m) => m.timestamp,
        }
    }

    pub fn is_event(&self) -> bool {
        matches!(self, Playable::Event(_))
    }
}

/// Whether a buffered message came from the network or from the local game.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Remote,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlayoutEntry {
    pub msg: Playable,
    pub due: u64,
    pub arrived_at: u64,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Enqueued {
    /// Buffered until `due`.
    OnTime { due: u64 },
    /// Already past its deadline; not buffered, the caller hands it to rollback.
    Late(PlayoutEntry),
}

// (due, timestamp, seq, sender, entity, insertion)
type Key = (u64, u64, u32, ClientId, EntityId, u64);

#[derive(Debug, Clone, Default)]
pub struct PlayoutBuffer {
    entries: BTreeMap<Key, PlayoutEntry>,
    inserted: u64,
}

impl PlayoutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Schedules `msg` for playout at `timestamp + lag(class, mode)`.
    pub fn enqueue(
        &mut self,
        msg: Playable,
        class: &str,
        mode: ConsistencyMode,
        policy: &LagPolicy,
        now: u64,
    ) -> Enqueued {
        self.enqueue_with_lag(msg, policy.effective_lag(class, mode), Origin::Remote, now)
    }

    pub fn enqueue_with_lag(&mut self, msg: Playable, lag_ms: u64, origin: Origin, now: u64) -> Enqueued {
        let due = msg.timestamp().saturating_add(lag_ms);
        let entry = PlayoutEntry { msg, due, arrived_at: now, origin };
        if now > due {
            return Enqueued::Late(entry);
        }
        let key = (due, msg.timestamp(), msg.seq(), msg.sender_id(), msg.entity_id(), self.inserted);
        self.inserted += 1;
        self.entries.insert(key, entry);
        Enqueued::OnTime { due }
    }

    /// Removes and returns every entry with `due <= now`, in release order.
    pub fn release_due(&mut self, now: u64) -> Vec<PlayoutEntry> {
        let pending = match now.checked_add(1) {
            Some(bound) => self.entries.split_off(&(bound, 0, 0, 0, 0, 0)),
            None => BTreeMap::new(),
        };
        std::mem::replace(&mut self.entries, pending).into_values().collect()
    }

    pub fn next_due(&self) -> Option<u64> {
        self.entries.keys().next().map(|k| k.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
