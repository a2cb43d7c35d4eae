//! The per-client composite that wires every manager into the reception and
//! transmission pipelines.
//!
//! Reception runs, per message: decode, delay measurement (communication),
//! base lag lookup (local lag), mode decision and lag tightening plus
//! buffering (critical area), ordering (rollback), prediction and
//! convergence (synchronization), and finally the game callbacks. Buffered
//! messages resume at the rollback stage when their deadline passes.
//!
//! Transmission runs once per tick for each local entity: mode update, the
//! dead-reckoning send rule, timestamping, route selection and encoding.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::clock::{delay_from_timestamp, rtt_probe, LatencyEstimator};
use crate::critical_area::{ConsistencyMode, ModeTracker, RegionSet};
use crate::dead_reckoning::{should_send, DeadReckoningPolicy, EntityKinematics, RemoteTrack};
use crate::geom::Vec2;
use crate::local_lag::{Enqueued, Origin, Playable, PlayoutBuffer, PlayoutEntry};
use crate::overlay::{self, LinkKind, LinkSpec, PeerCapabilities, PendingQueue, RouteDecision, RouteSwitch};
use crate::pdu::{
    self, EventKind, EventMessage, Message, MessageType, PingMessage, PongMessage, StateUpdate, WireError,
};
use crate::rollback::{apply_directive, CallbackFailure, Delivery, DeliveryLog, ReplayTarget};
use crate::{ClientId, EntityId, LinkId};

pub use config::{LocalEntity, PlayerManagerConfig};

/// Hooks the game offers to the medium.
pub trait GameCallbacks {
    /// New displayed state of a remote entity.
    fn apply_remote_state(&mut self, entity: EntityId, state: EntityKinematics);

    /// A previously applied remote state is being rolled back.
    fn undo_remote_state(&mut self, _entity: EntityId, _state: EntityKinematics) {}

    /// Plays out an event at virtual time `at`.
    fn apply_event(&mut self, event: &EventMessage, at: u64) -> Result<(), CallbackFailure>;

    /// Reverts a previously played event.
    fn undo_event(&mut self, event: &EventMessage, at: u64) -> Result<(), CallbackFailure>;

    /// Current state of an entity this client owns.
    fn query_local_state(&mut self, entity: EntityId, now: u64) -> EntityKinematics;

    fn notify_mode(&mut self, entity: EntityId, mode: ConsistencyMode);
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PmError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
}

/// Pipeline stages, in the order a received message visits them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Decode,
    Communication,
    LocalLag,
    CriticalArea,
    Rollback,
    Synchronization,
    Game,
}

/// Identifies a received message in the stage trace.
pub type MessageKey = (MessageType, ClientId, EntityId, u32);

/// A frame to put on the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub peer: ClientId,
    pub link_id: LinkId,
    pub frame: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReceptionOutcome {
    Buffered { due: u64 },
    Applied,
    RolledBack { undone: usize },
    DroppedDuplicate,
    DroppedBeyondWindow,
    CallbackFailed(CallbackFailure),
    Control,
    DecodeError(WireError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reception {
    pub outcome: ReceptionOutcome,
    pub outgoing: Vec<Outgoing>,
    /// Wall-clock time spent in the pipeline, callbacks included.
    pub processing: Duration,
    /// One-way delay measured from the message timestamp, for timed messages.
    pub delay_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PmCounters {
    pub received: u64,
    pub received_playable: u64,
    pub decode_errors: u64,
    pub clock_anomalies: u64,
    pub late: u64,
    pub rollbacks: u64,
    pub duplicates: u64,
    pub beyond_window: u64,
    pub callback_failures: u64,
    pub state_sends: u64,
    pub event_sends: u64,
    pub frames_out: u64,
    pub no_route_drops: u64,
}

#[derive(Debug, Clone)]
struct LocalState {
    class: String,
    next_seq: u32,
    last_sent: Option<EntityKinematics>,
    tracker: ModeTracker,
    pos: Option<Vec2>,
}

#[derive(Debug, Clone)]
struct RemoteEntity {
    owner: ClientId,
    track: Option<RemoteTrack>,
    tracker: ModeTracker,
    critical_flag: bool,
}

#[derive(Debug, Clone)]
struct PeerState {
    caps: PeerCapabilities,
    decision: RouteDecision,
    last_heard: Option<u64>,
    last_ping_at: Option<u64>,
    pending_ping: Option<PingMessage>,
}

pub struct PlayerManager {
    config: PlayerManagerConfig,
    regions: RegionSet,
    links: Vec<LinkSpec>,
    gated: BTreeSet<LinkId>,
    peers: BTreeMap<ClientId, PeerState>,
    latency: LatencyEstimator<ClientId>,
    link_latency: LatencyEstimator<LinkId>,
    buffer: PlayoutBuffer,
    log: DeliveryLog,
    local: BTreeMap<EntityId, LocalState>,
    remote: BTreeMap<EntityId, RemoteEntity>,
    positions: BTreeMap<EntityId, Vec2>,
    pending: PendingQueue,
    counters: PmCounters,
    switches: Vec<RouteSwitch>,
    stage_trace: Option<Vec<(MessageKey, Stage)>>,
    ping_counter: u32,
}

fn key_of(msg: &Playable) -> MessageKey {
    let ty = if msg.is_event() { MessageType::Event } else { MessageType::StateUpdate };
    (ty, msg.sender_id(), msg.entity_id(), msg.seq())
}

fn record(trace: &mut Option<Vec<(MessageKey, Stage)>>, key: MessageKey, stage: Stage) {
    if let Some(t) = trace.as_mut() {
        t.push((key, stage));
    }
}

impl PlayerManager {
    pub fn new(config: PlayerManagerConfig) -> Result<Self, PmError> {
        config.validate()?;
        let mut regions = RegionSet::new();
        for r in &config.regions {
            regions.set_region_coordinates(*r).map_err(|e| PmError::ConfigInvalid(e.to_string()))?;
        }
        let me = config.client_id;
        let links: Vec<LinkSpec> = config.links.iter().filter(|l| l.peer_of(me).is_some()).cloned().collect();
        let local = config
            .local_entities
            .iter()
            .map(|e| {
                let state = LocalState {
                    class: e.class.clone(),
                    next_seq: 0,
                    last_sent: None,
                    tracker: ModeTracker::new(config.mode_exit_hysteresis_ms),
                    pos: None,
                };
                (e.id, state)
            })
            .collect();
        Ok(Self {
            regions,
            links,
            gated: BTreeSet::new(),
            peers: BTreeMap::new(),
            latency: LatencyEstimator::new(config.ewma_alpha),
            link_latency: LatencyEstimator::new(config.ewma_alpha),
            buffer: PlayoutBuffer::new(),
            log: DeliveryLog::new(config.history_window_ms),
            local,
            remote: BTreeMap::new(),
            positions: BTreeMap::new(),
            pending: PendingQueue::new(config.max_queue_ms),
            counters: PmCounters::default(),
            switches: Vec::new(),
            stage_trace: None,
            ping_counter: 0,
            config,
        })
    }

    pub fn client_id(&self) -> ClientId {
        self.config.client_id
    }

    pub fn config(&self) -> &PlayerManagerConfig {
        &self.config
    }

    /// Records the stage sequence of every received message from now on.
    pub fn enable_stage_trace(&mut self) {
        self.stage_trace.get_or_insert_with(Vec::new);
    }

    pub fn stage_trace(&self) -> &[(MessageKey, Stage)] {
        self.stage_trace.as_deref().unwrap_or(&[])
    }

    /// Registers peers, gates direct links by capability, picks default
    /// routes and sends the initial latency probes.
    pub fn start_session(&mut self, peers: &[PeerCapabilities], now: u64) -> Result<Vec<Outgoing>, PmError> {
        let me = self.config.client_id;
        for caps in peers {
            if caps.peer_id == me {
                return Err(PmError::ConfigInvalid(format!("client {me} listed as its own peer")));
            }
            if !caps.direct_address_known {
                for l in self.links.iter_mut().filter(|l| l.kind == LinkKind::Direct && l.connects(me, caps.peer_id)) {
                    l.available = false;
                    self.gated.insert(l.id);
                }
            }
        }
        let mut out = Vec::new();
        for caps in peers {
            let fresh = RouteDecision::new(caps.peer_id, self.config.route_hysteresis_ms);
            let decision =
                overlay::select_route(me, caps.peer_id, &self.links, &|l| self.link_estimate(l), false, &fresh, now)
                    .map_err(|e| PmError::ConfigInvalid(e.to_string()))?;
            self.peers.insert(
                caps.peer_id,
                PeerState { caps: *caps, decision, last_heard: None, last_ping_at: None, pending_ping: None },
            );
            out.extend(self.send_ping(caps.peer_id, now));
        }
        Ok(out)
    }

    fn link_estimate(&self, link: &LinkSpec) -> f64 {
        self.link_latency.estimate(link.id).unwrap_or(link.base_delay_ms as f64)
    }

    fn send_ping(&mut self, peer: ClientId, now: u64) -> Option<Outgoing> {
        self.ping_counter += 1;
        let ping = PingMessage {
            sender_id: self.config.client_id,
            nonce: (u64::from(self.config.client_id) << 32) | u64::from(self.ping_counter),
            timestamp: now,
        };
        let state = self.peers.get_mut(&peer)?;
        state.pending_ping = Some(ping);
        state.last_ping_at = Some(now);
        let frame = pdu::encode(&ping.into()).expect("ping has no float fields");
        self.route_frame(peer, frame, now)
    }

    fn route_frame(&mut self, peer: ClientId, frame: Vec<u8>, now: u64) -> Option<Outgoing> {
        match self.peers.get(&peer).and_then(|p| p.decision.chosen) {
            Some(link_id) => {
                self.counters.frames_out += 1;
                Some(Outgoing { peer, link_id, frame })
            }
            None => {
                self.pending.push(peer, now, frame);
                None
            }
        }
    }

    /// Runs the reception pipeline on one frame that arrived at `now`,
    /// optionally over a known link.
    pub fn on_network_message(
        &mut self,
        bytes: &[u8],
        link: Option<LinkId>,
        now: u64,
        game: &mut dyn GameCallbacks,
    ) -> Reception {
        let started = Instant::now();
        let mut reception = self.receive(bytes, link, now, game);
        reception.processing = started.elapsed();
        reception
    }

    fn receive(&mut self, bytes: &[u8], link: Option<LinkId>, now: u64, game: &mut dyn GameCallbacks) -> Reception {
        let mut reception = Reception {
            outcome: ReceptionOutcome::Control,
            outgoing: Vec::new(),
            processing: Duration::ZERO,
            delay_ms: None,
        };
        self.counters.received += 1;

        let msg = match pdu::decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                self.counters.decode_errors += 1;
                reception.outcome = ReceptionOutcome::DecodeError(e);
                return reception;
            }
        };
        let sender = msg.sender_id();
        let playable = match msg {
            Message::State(m) => Playable::State(m),
            Message::Event(m) => Playable::Event(m),
            Message::Ping(_) | Message::Pong(_) => {
                let key = (msg.message_type(), sender, 0, 0);
                record(&mut self.stage_trace, key, Stage::Decode);
                record(&mut self.stage_trace, key, Stage::Communication);
                reception.outgoing = self.on_control(msg, now);
                return reception;
            }
        };
        let key = key_of(&playable);
        record(&mut self.stage_trace, key, Stage::Decode);

        // Communication: delay from the timestamp, fed to the estimators.
        record(&mut self.stage_trace, key, Stage::Communication);
        let delay = delay_from_timestamp(playable.timestamp(), now);
        if delay.clock_anomaly {
            self.counters.clock_anomalies += 1;
        }
        self.latency.observe(sender, delay.delay_ms as f64, now);
        if let Some(l) = link {
            self.link_latency.observe(l, delay.delay_ms as f64, now);
        }
        if let Some(p) = self.peers.get_mut(&sender) {
            p.last_heard = Some(now);
        }
        reception.delay_ms = Some(delay.delay_ms);
        self.counters.received_playable += 1;

        // Local lag: the object class decides the base lag.
        record(&mut self.stage_trace, key, Stage::LocalLag);
        let entity = playable.entity_id();
        let class = self.config.class_of(entity).to_owned();

        // Critical area: decide the mode, then tighten the lag and buffer.
        record(&mut self.stage_trace, key, Stage::CriticalArea);
        let strong_enabled = self.config.strong_mode_enabled;
        let tracker = ModeTracker::new(self.config.mode_exit_hysteresis_ms);
        let remote = self.remote.entry(entity).or_insert(RemoteEntity {
            owner: sender,
            track: None,
            tracker,
            critical_flag: false,
        });
        let mode = match playable {
            Playable::State(s) => {
                remote.critical_flag = strong_enabled && s.critical;
                let inside = strong_enabled && (s.critical || self.regions.contains_any(s.pos, &self.positions));
                remote.tracker.update(inside, now).0
            }
            Playable::Event(_) => remote.tracker.mode(),
        };
        let lag = if self.config.receiver_lag { self.config.lag.effective_lag(&class, mode) } else { 0 };
        let entry = match self.buffer.enqueue_with_lag(playable, lag, Origin::Remote, now) {
            Enqueued::OnTime { due } if due > now => {
                reception.outcome = ReceptionOutcome::Buffered { due };
                return reception;
            }
            Enqueued::OnTime { .. } => {
                // Due right now: release it through the normal path.
                let released = self.buffer.release_due(now);
                let mut outcome = ReceptionOutcome::Applied;
                for e in released {
                    let o = self.deliver(e, now, game);
                    if e.msg.timestamp() == playable.timestamp() && e.msg.seq() == playable.seq() {
                        outcome = o;
                    }
                }
                reception.outcome = outcome;
                return reception;
            }
            Enqueued::Late(entry) => entry,
        };
        self.counters.late += 1;
        reception.outcome = self.deliver(entry, now, game);
        reception
    }

    fn on_control(&mut self, msg: Message, now: u64) -> Vec<Outgoing> {
        match msg {
            Message::Ping(ping) => {
                if let Some(p) = self.peers.get_mut(&ping.sender_id) {
                    p.last_heard = Some(now);
                }
                let pong = PongMessage {
                    sender_id: self.config.client_id,
                    nonce: ping.nonce,
                    timestamp: now,
                    echo_timestamp: ping.timestamp,
                };
                let frame = pdu::encode(&pong.into()).expect("pong has no float fields");
                self.route_frame(ping.sender_id, frame, now).into_iter().collect()
            }
            Message::Pong(pong) => {
                if let Some(p) = self.peers.get_mut(&pong.sender_id) {
                    p.last_heard = Some(now);
                    if let Some(ping) = p.pending_ping {
                        if let Ok(d) = rtt_probe(&ping, &pong, now) {
                            p.pending_ping = None;
                            self.latency.observe(pong.sender_id, d as f64, now);
                        }
                    }
                }
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    /// Rollback, synchronization and game stages for one message whose
    /// playout time has come (or passed).
    fn deliver(&mut self, entry: PlayoutEntry, now: u64, game: &mut dyn GameCallbacks) -> ReceptionOutcome {
        let msg = entry.msg;
        if entry.origin == Origin::Local {
            if let Playable::Event(ev) = msg {
                if let Err(e) = game.apply_event(&ev, now) {
                    self.counters.callback_failures += 1;
                    return ReceptionOutcome::CallbackFailed(e);
                }
            }
            return ReceptionOutcome::Applied;
        }

        let key = key_of(&msg);
        record(&mut self.stage_trace, key, Stage::Rollback);
        let delivery =
            if self.config.rollback_scope.covers(&msg) { self.log.on_deliver(msg, now) } else { Delivery::Apply };
        let mut replayer = Replayer {
            remote: &mut self.remote,
            positions: &mut self.positions,
            policy: &self.config.dead_reckoning,
            game,
            now,
            stage_trace: &mut self.stage_trace,
            late: key,
        };
        match delivery {
            Delivery::Apply => match replayer.apply(&msg) {
                Ok(()) => ReceptionOutcome::Applied,
                Err(e) => {
                    self.log.retract(&msg);
                    self.counters.callback_failures += 1;
                    ReceptionOutcome::CallbackFailed(e)
                }
            },
            Delivery::Rollback(directive) => {
                self.counters.rollbacks += 1;
                match apply_directive(&mut replayer, &directive) {
                    Ok(_) => ReceptionOutcome::RolledBack { undone: directive.undo.len() },
                    Err(e) => {
                        self.log.retract(&msg);
                        self.counters.callback_failures += 1;
                        ReceptionOutcome::CallbackFailed(e)
                    }
                }
            }
            Delivery::DropDuplicate => {
                self.counters.duplicates += 1;
                ReceptionOutcome::DroppedDuplicate
            }
            Delivery::DropBeyondWindow => {
                self.counters.beyond_window += 1;
                ReceptionOutcome::DroppedBeyondWindow
            }
        }
    }

    /// Plays out every buffered message whose deadline is at or before `now`.
    pub fn release_due(&mut self, now: u64, game: &mut dyn GameCallbacks) -> usize {
        let released = self.buffer.release_due(now);
        let n = released.len();
        for e in released {
            self.deliver(e, now, game);
        }
        n
    }

    /// Earliest pending playout deadline.
    pub fn next_due(&self) -> Option<u64> {
        self.buffer.next_due()
    }

    /// One frame of the transmission pipeline.
    pub fn tick(&mut self, now: u64, game: &mut dyn GameCallbacks) -> Vec<Outgoing> {
        self.release_due(now, game);
        self.pending.expire(now);

        // Critical area for local entities.
        let strong_enabled = self.config.strong_mode_enabled;
        let ids: Vec<EntityId> = self.local.keys().copied().collect();
        let mut actuals = Vec::with_capacity(ids.len());
        for id in &ids {
            let actual = game.query_local_state(*id, now);
            self.positions.insert(*id, actual.pos);
            actuals.push(actual);
        }
        for (id, actual) in ids.iter().zip(&actuals) {
            let inside = strong_enabled && self.regions.contains_any(actual.pos, &self.positions);
            let state = self.local.get_mut(id).expect("local entity");
            state.pos = Some(actual.pos);
            let (mode, changed) = state.tracker.update(inside, now);
            if changed {
                game.notify_mode(*id, mode);
            }
        }

        self.update_routes(now);
        let mut out = self.flush_pending();

        // Dead-reckoning send rule.
        let heartbeat = self.config.heartbeat_ms;
        let me = self.config.client_id;
        for (id, actual) in ids.iter().zip(actuals) {
            let state = self.local.get_mut(id).expect("local entity");
            let strong = state.tracker.mode() == ConsistencyMode::Strong;
            let policy = if strong {
                self.config.dead_reckoning.tightened(self.config.strong.threshold_scale)
            } else {
                self.config.dead_reckoning
            };
            let actual = EntityKinematics { at: now, ..actual };
            if !should_send(&actual, state.last_sent.as_ref(), &policy, heartbeat, now) {
                continue;
            }
            let update = StateUpdate {
                sender_id: me,
                entity_id: *id,
                seq: state.next_seq,
                timestamp: now,
                pos: actual.pos,
                vel: actual.vel,
                critical: strong,
            };
            let Ok(frame) = pdu::encode(&update.into()) else {
                // Non-finite state from the game; nothing sensible to send.
                continue;
            };
            state.next_seq += 1;
            state.last_sent = Some(actual);
            self.counters.state_sends += 1;
            out.extend(self.broadcast(frame, now));
        }

        if let Some(interval) = self.config.ping_interval_ms {
            let due: Vec<ClientId> = self
                .peers
                .iter()
                .filter(|(_, p)| {
                    let silent = p.last_heard.is_none_or(|t| now.saturating_sub(t) >= interval);
                    let probed = p.last_ping_at.is_some_and(|t| now.saturating_sub(t) < interval);
                    silent && !probed
                })
                .map(|(id, _)| *id)
                .collect();
            for peer in due {
                out.extend(self.send_ping(peer, now));
            }
        }

        // Synchronization: feed the canvas the converged remote positions.
        let policy = self.config.dead_reckoning;
        for (id, remote) in &self.remote {
            if let Some(track) = &remote.track {
                let pos = track.displayed(&policy, now);
                self.positions.insert(*id, pos);
                game.apply_remote_state(*id, EntityKinematics::new(pos, track.latest().vel, now));
            }
        }
        out
    }

    fn broadcast(&mut self, frame: Vec<u8>, now: u64) -> Vec<Outgoing> {
        let peers: Vec<ClientId> = self.peers.keys().copied().collect();
        peers.into_iter().filter_map(|p| self.route_frame(p, frame.clone(), now)).collect()
    }

    fn flush_pending(&mut self) -> Vec<Outgoing> {
        let mut out = Vec::new();
        let ready: Vec<(ClientId, LinkId)> =
            self.peers.iter().filter_map(|(id, p)| p.decision.chosen.map(|l| (*id, l))).collect();
        for (peer, link_id) in ready {
            for frame in self.pending.take_for(peer) {
                self.counters.frames_out += 1;
                out.push(Outgoing { peer, link_id, frame });
            }
        }
        out
    }

    fn critical_proximity(&self, peer: ClientId) -> bool {
        let me_critical = self.local.values().any(|s| s.tracker.mode() == ConsistencyMode::Strong);
        let peer_entities = || self.remote.iter().filter(move |(_, r)| r.owner == peer);
        let peer_critical = peer_entities().any(|(_, r)| r.critical_flag);
        if me_critical && peer_critical {
            return true;
        }
        let Some(radius) = self.config.proximity_radius_m else {
            return false;
        };
        self.local.values().filter_map(|s| s.pos).any(|mine| {
            peer_entities().filter_map(|(id, _)| self.positions.get(id)).any(|theirs| mine.distance(*theirs) <= radius)
        })
    }

    fn update_routes(&mut self, now: u64) {
        let me = self.config.client_id;
        let peers: Vec<ClientId> = self.peers.keys().copied().collect();
        for peer in peers {
            let critical = self.config.overlay_enabled && self.critical_proximity(peer);
            let current = self.peers[&peer].decision;
            let next =
                overlay::select_route(me, peer, &self.links, &|l| self.link_estimate(l), critical, &current, now)
                    .unwrap_or(RouteDecision { chosen: None, ..current });
            self.set_decision(peer, next, now, false);
        }
    }

    fn set_decision(&mut self, peer: ClientId, next: RouteDecision, now: u64, failover: bool) {
        let state = self.peers.get_mut(&peer).expect("known peer");
        if next.chosen != state.decision.chosen {
            self.switches.push(RouteSwitch { peer, at: now, from: state.decision.chosen, to: next.chosen, failover });
        }
        state.decision = next;
    }

    /// A link came up or went down. Gated direct links stay down.
    pub fn on_link_change(&mut self, link_id: LinkId, available: bool, now: u64) {
        if !self.links.iter().any(|l| l.id == link_id) {
            return;
        }
        let available = available && !self.gated.contains(&link_id);
        let me = self.config.client_id;
        let peers: Vec<ClientId> = self.peers.keys().copied().collect();
        let estimates: BTreeMap<LinkId, f64> = self.links.iter().map(|l| (l.id, self.link_estimate(l))).collect();
        for peer in peers {
            let current = self.peers[&peer].decision;
            let next =
                overlay::on_link_change(me, &mut self.links, link_id, available, &|l| estimates[&l.id], &current, now)
                    .unwrap_or(RouteDecision { chosen: None, ..current });
            let lost = current.chosen.is_some() && next.chosen != current.chosen;
            self.set_decision(peer, next, now, lost);
        }
    }

    /// Emits a local game event: it is played out locally (after the local
    /// lag when sender-side lag is on) and sent to every peer.
    pub fn emit_event(
        &mut self,
        entity: EntityId,
        kind: EventKind,
        payload: [u8; 8],
        now: u64,
        game: &mut dyn GameCallbacks,
    ) -> Vec<Outgoing> {
        let me = self.config.client_id;
        let Some(state) = self.local.get_mut(&entity) else {
            return Vec::new();
        };
        let event =
            EventMessage { sender_id: me, entity_id: entity, seq: state.next_seq, timestamp: now, kind, payload };
        state.next_seq += 1;
        let mode = state.tracker.mode();
        let lag = if self.config.sender_side_lag { self.config.lag.effective_lag(&state.class, mode) } else { 0 };
        if lag == 0 {
            if game.apply_event(&event, now).is_err() {
                self.counters.callback_failures += 1;
            }
        } else {
            self.buffer.enqueue_with_lag(Playable::Event(event), lag, Origin::Local, now);
        }
        self.counters.event_sends += 1;
        let frame = pdu::encode(&event.into()).expect("events carry no floats");
        self.broadcast(frame, now)
    }

    pub fn counters(&self) -> PmCounters {
        let mut c = self.counters;
        c.no_route_drops = self.pending.dropped();
        c
    }

    pub fn route(&self, peer: ClientId) -> Option<&RouteDecision> {
        self.peers.get(&peer).map(|p| &p.decision)
    }

    pub fn route_kind(&self, peer: ClientId) -> Option<LinkKind> {
        let id = self.route(peer)?.chosen?;
        self.links.iter().find(|l| l.id == id).map(|l| l.kind)
    }

    pub fn route_switches(&self) -> &[RouteSwitch] {
        &self.switches
    }

    pub fn peers(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.peers.keys().copied()
    }

    pub fn peer_capabilities(&self, peer: ClientId) -> Option<PeerCapabilities> {
        self.peers.get(&peer).map(|p| p.caps)
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn latency(&self) -> &LatencyEstimator<ClientId> {
        &self.latency
    }

    pub fn local_mode(&self, entity: EntityId) -> Option<ConsistencyMode> {
        self.local.get(&entity).map(|s| s.tracker.mode())
    }

    pub fn remote_mode(&self, entity: EntityId) -> Option<ConsistencyMode> {
        self.remote.get(&entity).map(|r| r.tracker.mode())
    }

    pub fn next_seq(&self, entity: EntityId) -> Option<u32> {
        self.local.get(&entity).map(|s| s.next_seq)
    }

    /// Displayed position of a remote entity at `t`, once anything is known.
    pub fn displayed(&self, entity: EntityId, t: u64) -> Option<Vec2> {
        let track = self.remote.get(&entity)?.track.as_ref()?;
        Some(track.displayed(&self.config.dead_reckoning, t))
    }

    pub fn is_converging(&self, entity: EntityId, t: u64) -> bool {
        self.remote
            .get(&entity)
            .and_then(|r| r.track.as_ref())
            .is_some_and(|track| track.is_converging(&self.config.dead_reckoning, t))
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn pending_frames(&self) -> usize {
        self.pending.len()
    }
}

/// Carries rollback directives and plain applications out against the
/// synchronization state and the game.
struct Replayer<'a> {
    remote: &'a mut BTreeMap<EntityId, RemoteEntity>,
    positions: &'a mut BTreeMap<EntityId, Vec2>,
    policy: &'a DeadReckoningPolicy,
    game: &'a mut dyn GameCallbacks,
    now: u64,
    stage_trace: &'a mut Option<Vec<(MessageKey, Stage)>>,
    late: MessageKey,
}

impl ReplayTarget for Replayer<'_> {
    fn undo(&mut self, msg: &Playable) -> Result<(), CallbackFailure> {
        match msg {
            Playable::State(s) => {
                self.game.undo_remote_state(s.entity_id, EntityKinematics::new(s.pos, s.vel, s.timestamp));
                Ok(())
            }
            Playable::Event(e) => self.game.undo_event(e, self.now),
        }
    }

    fn apply(&mut self, msg: &Playable) -> Result<(), CallbackFailure> {
        let key = key_of(msg);
        let first_visit = key == self.late;
        if first_visit {
            record(self.stage_trace, key, Stage::Synchronization);
            record(self.stage_trace, key, Stage::Game);
        }
        match msg {
            Playable::State(s) => {
                let state = EntityKinematics::new(s.pos, s.vel, s.timestamp);
                let Some(remote) = self.remote.get_mut(&s.entity_id) else {
                    return Ok(());
                };
                match remote.track.as_mut() {
                    Some(track) => {
                        track.correct(state, self.policy, self.now);
                    }
                    None => remote.track = Some(RemoteTrack::new(state, self.now)),
                }
                let track = remote.track.as_ref().expect("track set above");
                let pos = track.displayed(self.policy, self.now);
                self.positions.insert(s.entity_id, pos);
                self.game.apply_remote_state(s.entity_id, EntityKinematics::new(pos, track.latest().vel, self.now));
                Ok(())
            }
            Playable::Event(e) => self.game.apply_event(e, self.now),
        }
    }
}
