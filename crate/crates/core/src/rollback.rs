//! Temporal ordering of delivered messages.
//!
//! Each `(sender, entity)` stream keeps the messages it has applied, sorted
//! by `(timestamp, seq)`. A message that sorts before the newest applied one
//! yields a [`RollbackDirective`]: undo every newer message, newest first,
//! then replay the late message and the undone ones, oldest first.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use thiserror::Error;

use crate::local_lag::Playable;
use crate::{ClientId, EntityId};

pub const DEFAULT_HISTORY_WINDOW_MS: u64 = 2000;

pub type StreamId = (ClientId, EntityId);

/// Which messages participate in rollback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RollbackScope {
    #[default]
    All,
    EventsOnly,
}

impl RollbackScope {
    pub fn covers(self, msg: &Playable) -> bool {
        match self {
            RollbackScope::All => true,
            RollbackScope::EventsOnly => msg.is_event(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollbackDirective {
    /// Applied messages newer than the late one, newest first.
    pub undo: Vec<Playable>,
    /// The late message followed by the undone ones, oldest first.
    pub replay: Vec<Playable>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Delivery {
    Apply,
    Rollback(RollbackDirective),
    DropDuplicate,
    /// Too old to repair: it predates the retained history.
    DropBeyondWindow,
}

fn key(msg: &Playable) -> (u64, u32) {
    (msg.timestamp(), msg.seq())
}

#[derive(Debug, Clone, Default)]
struct StreamLog {
    applied: Vec<Playable>,
    seqs: BTreeSet<u32>,
}

#[derive(Debug, Clone)]
pub struct DeliveryLog {
    streams: BTreeMap<StreamId, StreamLog>,
    history_window_ms: u64,
    beyond_window: u64,
}

impl DeliveryLog {
    pub fn new(history_window_ms: u64) -> Self {
        Self { streams: BTreeMap::new(), history_window_ms, beyond_window: 0 }
    }

    /// Classifies `msg` and records it as applied unless it is dropped.
    pub fn on_deliver(&mut self, msg: Playable, now: u64) -> Delivery {
        let window = self.history_window_ms;
        let horizon = now.saturating_sub(window);
        let log = self.streams.entry((msg.sender_id(), msg.entity_id())).or_default();

        if log.seqs.contains(&msg.seq()) {
            return Delivery::DropDuplicate;
        }
        let k = key(&msg);
        let outcome = match log.applied.last() {
            None => Delivery::Apply,
            Some(last) if k > key(last) => Delivery::Apply,
            Some(_) if msg.timestamp() < horizon => {
                self.beyond_window += 1;
                return Delivery::DropBeyondWindow;
            }
            Some(_) => {
                let at = log.applied.partition_point(|m| key(m) <= k);
                let newer = &log.applied[at..];
                let undo = newer.iter().rev().copied().collect();
                let replay = std::iter::once(msg).chain(newer.iter().copied()).collect();
                log.applied.insert(at, msg);
                log.seqs.insert(msg.seq());
                Self::prune(log, horizon);
                return Delivery::Rollback(RollbackDirective { undo, replay });
            }
        };
        log.applied.push(msg);
        log.seqs.insert(msg.seq());
        Self::prune(log, horizon);
        outcome
    }

    // Drops entries older than the horizon, always keeping the newest.
    fn prune(log: &mut StreamLog, horizon: u64) {
        let keep_from =
            log.applied.partition_point(|m| m.timestamp() < horizon).min(log.applied.len().saturating_sub(1));
        for m in log.applied.drain(..keep_from) {
            log.seqs.remove(&m.seq());
        }
    }

    /// Removes a message recorded by [`on_deliver`](Self::on_deliver), used
    /// when the game failed to carry out its directive.
    pub fn retract(&mut self, msg: &Playable) -> bool {
        let Some(log) = self.streams.get_mut(&(msg.sender_id(), msg.entity_id())) else {
            return false;
        };
        match log.applied.iter().position(|m| key(m) == key(msg)) {
            Some(i) => {
                log.applied.remove(i);
                log.seqs.remove(&msg.seq());
                true
            }
            None => false,
        }
    }

    /// Applied messages of one stream, in timestamp order.
    pub fn applied(&self, stream: StreamId) -> &[Playable] {
        self.streams.get(&stream).map_or(&[], |l| l.applied.as_slice())
    }

    pub fn beyond_window_count(&self) -> u64 {
        self.beyond_window
    }

    pub fn history_window_ms(&self) -> u64 {
        self.history_window_ms
    }
}

impl Default for DeliveryLog {
    fn default() -> Self {
        Self::new(DEFAULT_HISTORY_WINDOW_MS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("game callback failed: {0}")]
pub struct CallbackFailure(pub String);

/// Game-side hooks a directive is carried out against.
pub trait ReplayTarget {
    fn undo(&mut self, msg: &Playable) -> Result<(), CallbackFailure>;
    fn apply(&mut self, msg: &Playable) -> Result<(), CallbackFailure>;
}

/// Runs the undo callbacks newest-first, then the replay oldest-first.
/// Returns the number of callbacks made.
pub fn apply_directive(target: &mut dyn ReplayTarget, directive: &RollbackDirective) -> Result<usize, CallbackFailure> {
    for m in &directive.undo {
        target.undo(m)?;
    }
    for m in &directive.replay {
        target.apply(m)?;
    }
    Ok(directive.undo.len() + directive.replay.len())
}
