//! Route selection between alternative links to a peer.
//!
//! The relay (server) path is the default. When a peer is in critical
//! proximity and a direct link is usable, the lowest-delay link wins. Quality
//! driven switches respect a per-peer dwell time; losing the current link
//! fails over at once.

use std::collections::{BTreeMap, VecDeque};

use serde::Deserialize;
use thiserror::Error;

use crate::{ClientId, LinkId};

pub const DEFAULT_ROUTE_HYSTERESIS_MS: u64 = 500;
pub const DEFAULT_MAX_QUEUE_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Relay,
    Direct,
}

impl LinkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::Relay => "relay",
            LinkKind::Direct => "direct",
        }
    }
}

fn yes() -> bool {
    true
}

/// A bidirectional simulated path between two clients.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: LinkId,
    pub a: ClientId,
    pub b: ClientId,
    pub kind: LinkKind,
    pub base_delay_ms: u64,
    /// Half-width of the jitter interval.
    #[serde(default)]
    pub jitter_ms: u64,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default = "yes")]
    pub available: bool,
}

impl LinkSpec {
    pub fn peer_of(&self, from: ClientId) -> Option<ClientId> {
        if from == self.a {
            Some(self.b)
        } else if from == self.b {
            Some(self.a)
        } else {
            None
        }
    }

    pub fn connects(&self, x: ClientId, y: ClientId) -> bool {
        (self.a == x && self.b == y) || (self.a == y && self.b == x)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.a == self.b {
            return Err(format!("link {} connects client {} to itself", self.id, self.a));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(format!("loss_prob {} outside [0, 1]", self.loss_prob));
        }
        Ok(())
    }
}

/// What a peer told us about itself when the session started.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeerCapabilities {
    pub peer_id: ClientId,
    pub direct_address_known: bool,
    pub has_gps_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OverlayError {
    #[error("no available link to peer {0}")]
    NoAvailableLink(ClientId),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteDecision {
    pub peer: ClientId,
    pub chosen: Option<LinkId>,
    pub last_switch_at: Option<u64>,
    pub hysteresis_ms: u64,
}

impl RouteDecision {
    pub fn new(peer: ClientId, hysteresis_ms: u64) -> Self {
        Self { peer, chosen: None, last_switch_at: None, hysteresis_ms }
    }

    fn dwell_satisfied(&self, now: u64) -> bool {
        self.last_switch_at.is_none_or(|at| now.saturating_sub(at) >= self.hysteresis_ms)
    }

    fn switch_to(self, link: Option<LinkId>, now: u64) -> Self {
        if link == self.chosen {
            return self;
        }
        Self { chosen: link, last_switch_at: Some(now), ..self }
    }
}

fn best<'a>(links: impl Iterator<Item = &'a LinkSpec>, estimate: &dyn Fn(&LinkSpec) -> f64) -> Option<LinkId> {
    links.map(|l| (estimate(l), l.id)).min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))).map(|(_, id)| id)
}

fn usable(links: &[LinkSpec], peer: ClientId, me: ClientId) -> impl Iterator<Item = &LinkSpec> {
    links.iter().filter(move |l| l.available && l.connects(me, peer))
}

/// Picks the route to `peer` for this tick.
///
/// `links` may contain links to other peers; only those joining `me` and
/// `peer` are considered. `estimate` gives the expected one-way delay of a
/// link.
pub fn select_route(
    me: ClientId,
    peer: ClientId,
    links: &[LinkSpec],
    estimate: &dyn Fn(&LinkSpec) -> f64,
    critical_proximity: bool,
    decision: &RouteDecision,
    now: u64,
) -> Result<RouteDecision, OverlayError> {
    let mut available = usable(links, peer, me).peekable();
    if available.peek().is_none() {
        return Err(OverlayError::NoAvailableLink(peer));
    }
    let has_direct = usable(links, peer, me).any(|l| l.kind == LinkKind::Direct);
    let desired = if critical_proximity && has_direct {
        best(usable(links, peer, me), estimate)
    } else {
        best(usable(links, peer, me).filter(|l| l.kind == LinkKind::Relay), estimate)
            .or_else(|| best(usable(links, peer, me), estimate))
    };

    let current_ok = decision.chosen.is_some_and(|id| usable(links, peer, me).any(|l| l.id == id));
    if current_ok && !decision.dwell_satisfied(now) {
        return Ok(*decision);
    }
    Ok(decision.switch_to(desired, now))
}

/// Applies an availability change and fails over if the chosen link went down.
pub fn on_link_change(
    me: ClientId,
    links: &mut [LinkSpec],
    link_id: LinkId,
    available: bool,
    estimate: &dyn Fn(&LinkSpec) -> f64,
    decision: &RouteDecision,
    now: u64,
) -> Result<RouteDecision, OverlayError> {
    let link = links.iter_mut().find(|l| l.id == link_id).ok_or(OverlayError::UnknownLink(link_id))?;
    link.available = available;
    let peer = decision.peer;
    let current_ok = decision.chosen.is_some_and(|id| usable(links, peer, me).any(|l| l.id == id));
    if current_ok {
        return Ok(*decision);
    }
    match best(usable(links, peer, me), estimate) {
        Some(id) => Ok(decision.switch_to(Some(id), now)),
        None => Err(OverlayError::NoAvailableLink(peer)),
    }
}

/// Frames waiting for a route, dropped after `max_wait_ms`.
#[derive(Debug, Clone)]
pub struct PendingQueue {
    entries: VecDeque<(ClientId, u64, Vec<u8>)>,
    max_wait_ms: u64,
    dropped: u64,
}

impl PendingQueue {
    pub fn new(max_wait_ms: u64) -> Self {
        Self { entries: VecDeque::new(), max_wait_ms, dropped: 0 }
    }

    pub fn push(&mut self, peer: ClientId, now: u64, frame: Vec<u8>) {
        self.entries.push_back((peer, now, frame));
    }

    /// Drops frames that waited longer than the limit; returns how many.
    pub fn expire(&mut self, now: u64) -> u64 {
        let before = self.entries.len();
        let limit = self.max_wait_ms;
        self.entries.retain(|(_, at, _)| now.saturating_sub(*at) <= limit);
        let n = (before - self.entries.len()) as u64;
        self.dropped += n;
        n
    }

    /// Removes and returns the frames queued for `peer`, oldest first.
    pub fn take_for(&mut self, peer: ClientId) -> Vec<Vec<u8>> {
        let (out, keep): (VecDeque<_>, VecDeque<_>) = self.entries.drain(..).partition(|(p, _, _)| *p == peer);
        self.entries = keep;
        out.into_iter().map(|(_, _, f)| f).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

impl Default for PendingQueue {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_QUEUE_MS)
    }
}

/// A route change, kept for auditing dwell times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteSwitch {
    pub peer: ClientId,
    pub at: u64,
    pub from: Option<LinkId>,
    pub to: Option<LinkId>,
    pub failover: bool,
}

/// Checks that non-failover switches per peer are at least `hysteresis_ms`
/// apart. Returns the first offending pair.
pub fn check_dwell(switches: &[RouteSwitch], hysteresis_ms: u64) -> Result<(), (RouteSwitch, RouteSwitch)> {
    let mut last: BTreeMap<ClientId, RouteSwitch> = BTreeMap::new();
    for s in switches {
        if let Some(prev) = last.get(&s.peer) {
            if !s.failover && s.at.saturating_sub(prev.at) < hysteresis_ms {
                return Err((*prev, *s));
            }
        }
        last.insert(s.peer, *s);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn links() -> Vec<LinkSpec> {
        vec![
            LinkSpec {
                id: 1,
                a: 1,
                b: 2,
                kind: LinkKind::Relay,
                base_delay_ms: 250,
                jitter_ms: 0,
                loss_prob: 0.0,
                available: true,
            },
            LinkSpec {
                id: 2,
                a: 1,
                b: 2,
                kind: LinkKind::Direct,
                base_delay_ms: 40,
                jitter_ms: 0,
                loss_prob: 0.0,
                available: true,
            },
        ]
    }

    fn nominal(l: &LinkSpec) -> f64 {
        l.base_delay_ms as f64
    }

    #[test]
    fn relay_only() {
        let mut ls = links();
        ls[1].available = false;
        let d = select_route(1, 2, &ls, &nominal, true, &RouteDecision::new(2, 500), 0).unwrap();
        assert_eq!(d.chosen, Some(1));
    }

    #[test]
    fn direct_when_critical() {
        let ls = links();
        let start = select_route(1, 2, &ls, &nominal, false, &RouteDecision::new(2, 500), 0).unwrap();
        assert_eq!(start.chosen, Some(1));
        let d = select_route(1, 2, &ls, &nominal, true, &start, 600).unwrap();
        assert_eq!(d.chosen, Some(2));
    }

    #[test]
    fn hysteresis_trace() {
        let ls = links();
        let mut d = select_route(1, 2, &ls, &nominal, false, &RouteDecision::new(2, 500), 0).unwrap();
        let mut changes = Vec::new();
        for t in 1..=2000 {
            let critical = (1000..1200).contains(&t);
            let next = select_route(1, 2, &ls, &nominal, critical, &d, t).unwrap();
            if next.chosen != d.chosen {
                changes.push((t, next.chosen));
            }
            d = next;
        }
        assert_eq!(changes, vec![(1000, Some(2)), (1500, Some(1))]);
    }

    #[test]
    fn failover_ignores_hysteresis() {
        let mut ls = links();
        let d = RouteDecision { peer: 2, chosen: Some(2), last_switch_at: Some(1000), hysteresis_ms: 500 };
        let after = on_link_change(1, &mut ls, 2, false, &nominal, &d, 1001).unwrap();
        assert_eq!(after.chosen, Some(1));
        assert_eq!(after.last_switch_at, Some(1001));

        let unrelated = on_link_change(1, &mut ls, 2, false, &nominal, &after, 1002).unwrap();
        assert_eq!(unrelated, after);

        assert_eq!(on_link_change(1, &mut ls, 1, false, &nominal, &after, 1003), Err(OverlayError::NoAvailableLink(2)));
        assert_eq!(select_route(1, 2, &ls, &nominal, false, &after, 1004), Err(OverlayError::NoAvailableLink(2)));
    }

    #[test]
    fn queue_then_drop() {
        // Step every 50 ms with both links down; frames expire after 1 s.
        let mut q = PendingQueue::default();
        let mut expired_at = Vec::new();
        for t in (0..=2000).step_by(50) {
            if t <= 500 {
                q.push(2, t, vec![t as u8]);
            }
            if q.expire(t) > 0 {
                expired_at.push(t);
            }
        }
        assert_eq!(expired_at.first(), Some(&1050));
        assert_eq!(expired_at.last(), Some(&1550));
        assert_eq!(q.dropped(), 11);
        assert!(q.is_empty());
    }

    #[test]
    fn queue_flushes_per_peer() {
        let mut q = PendingQueue::default();
        q.push(2, 0, vec![1]);
        q.push(3, 0, vec![2]);
        q.push(2, 10, vec![3]);
        assert_eq!(q.take_for(2), vec![vec![1], vec![3]]);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn tie_break_by_link_id() {
        let mut ls = links();
        ls[1].base_delay_ms = 250;
        let d = select_route(1, 2, &ls, &nominal, true, &RouteDecision::new(2, 500), 0).unwrap();
        assert_eq!(d.chosen, Some(1));
    }

    #[test]
    fn dwell_audit() {
        let s = |at, failover| RouteSwitch { peer: 2, at, from: None, to: None, failover };
        assert!(check_dwell(&[s(0, false), s(500, false), s(600, true)], 500).is_ok());
        assert!(check_dwell(&[s(0, false), s(499, false)], 500).is_err());
    }
}
