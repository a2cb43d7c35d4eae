use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::critical_area::ConsistencyMode;
use crate::dead_reckoning::EntityKinematics;
use crate::netsim::{SimError, Simulator};
use crate::overlay::{check_dwell, LinkKind, RouteSwitch};
use crate::pdu::{self, EventKind, EventMessage, Message, MessageType};
use crate::player_manager::{GameCallbacks, Outgoing, PlayerManager, PmCounters};
use crate::rollback::CallbackFailure;
use crate::{ClientId, EntityId, LinkId};

use super::config::{LinkEvent, ScenarioConfig, ScenarioError};
use super::metrics::{percentile, Accumulator, EventRow, MetricsRow, Summary, EVENTS_HEADER, METRICS_HEADER};
use super::motion::Motion;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ScenarioError),
    #[error("invariant violated at t={at}: {message}")]
    Invariant { at: u64, message: String },
    #[error("output error: {0}")]
    Io(#[from] io::Error),
}

impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        RunError::Invariant { at: 0, message: e.to_string() }
    }
}

/// Where a run writes its outputs. Everything is optional.
#[derive(Default)]
pub struct RunOptions {
    pub metrics: Option<Box<dyn Write>>,
    pub events: Option<Box<dyn Write>>,
    pub trace: Option<Box<dyn Write>>,
    /// Keep every metrics row in the report as well.
    pub keep_rows: bool,
}

/// A StateUpdate that reached a receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveryRecord {
    pub sender: ClientId,
    pub receiver: ClientId,
    pub entity: EntityId,
    pub timestamp: u64,
    pub arrived_at: u64,
    pub link_id: LinkId,
    pub kind: LinkKind,
}

impl DeliveryRecord {
    pub fn delay_ms(&self) -> u64 {
        self.arrived_at.saturating_sub(self.timestamp)
    }
}

/// A frame handed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendRecord {
    pub at: u64,
    pub from: ClientId,
    pub to: ClientId,
    pub msg_type: MessageType,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub summary: Summary,
    pub rows: Vec<MetricsRow>,
    pub events: Vec<EventRow>,
    pub deliveries: Vec<DeliveryRecord>,
    pub sends: Vec<SendRecord>,
    pub route_switches: BTreeMap<ClientId, Vec<RouteSwitch>>,
    pub counters: BTreeMap<ClientId, PmCounters>,
    pub processing: Vec<Duration>,
}

/// Scripted game on one client: owns closed-form motions and keeps
/// per-event inverse records so rollbacks can be undone.
#[derive(Debug, Default)]
pub struct BotGame {
    motions: BTreeMap<EntityId, Motion>,
    first_playout: BTreeMap<(ClientId, u32), u64>,
    applied: BTreeSet<(ClientId, u32)>,
    hits: i64,
    mode_changes: u64,
}

impl BotGame {
    pub fn new(motions: BTreeMap<EntityId, Motion>) -> Self {
        Self { motions, ..Self::default() }
    }

    /// First playout time of an event, by (sender, seq).
    pub fn playout(&self, sender: ClientId, seq: u32) -> Option<u64> {
        self.first_playout.get(&(sender, seq)).copied()
    }

    pub fn applied_events(&self) -> usize {
        self.applied.len()
    }

    pub fn hits(&self) -> i64 {
        self.hits
    }

    pub fn mode_changes(&self) -> u64 {
        self.mode_changes
    }
}

impl GameCallbacks for BotGame {
    fn apply_remote_state(&mut self, _entity: EntityId, _state: EntityKinematics) {}

    fn apply_event(&mut self, event: &EventMessage, at: u64) -> Result<(), CallbackFailure> {
        let key = (event.sender_id, event.seq);
        if !self.applied.insert(key) {
            return Err(CallbackFailure(format!("event {key:?} applied twice")));
        }
        self.first_playout.entry(key).or_insert(at);
        if event.kind == EventKind::Fire {
            self.hits += 1;
        }
        Ok(())
    }

    fn undo_event(&mut self, event: &EventMessage, _at: u64) -> Result<(), CallbackFailure> {
        let key = (event.sender_id, event.seq);
        if !self.applied.remove(&key) {
            return Err(CallbackFailure(format!("event {key:?} undone but not applied")));
        }
        if event.kind == EventKind::Fire {
            self.hits -= 1;
        }
        Ok(())
    }

    fn query_local_state(&mut self, entity: EntityId, now: u64) -> EntityKinematics {
        self.motions
            .get(&entity)
            .map_or(EntityKinematics::new(crate::Vec2::ZERO, crate::Vec2::ZERO, now), |m| m.at(now))
    }

    fn notify_mode(&mut self, _entity: EntityId, _mode: ConsistencyMode) {
        self.mode_changes += 1;
    }
}

struct Client {
    pm: PlayerManager,
    game: BotGame,
}

struct Harness {
    sim: Simulator,
    clients: BTreeMap<ClientId, Client>,
    report: RunReport,
    keep_rows: bool,
    metrics: Option<Box<dyn Write>>,
    divergence: Accumulator,
    delays: Accumulator,
    now: u64,
}

impl Harness {
    fn send_all(&mut self, from: ClientId, out: Vec<Outgoing>) -> Result<(), RunError> {
        for o in out {
            let msg_type = pdu::peek_header(&o.frame)
                .map(|h| h.message_type)
                .map_err(|e| self.invariant(format!("client {from} emitted a bad frame: {e}")))?;
            self.report.sends.push(SendRecord { at: self.now, from, to: o.peer, msg_type });
            self.sim.send(o.link_id, from, o.frame)?;
        }
        Ok(())
    }

    fn invariant(&self, message: String) -> RunError {
        RunError::Invariant { at: self.now, message }
    }

    fn deliver_due(&mut self) -> Result<(), RunError> {
        while self.sim.peek_time() == Some(self.now) {
            let ev = self.sim.step()?;
            let Some(client) = self.clients.get_mut(&ev.dest) else {
                return Err(self.invariant(format!("delivery to unknown client {}", ev.dest)));
            };
            if let Ok(Message::State(s)) = pdu::decode(&ev.payload) {
                let kind = self.sim.link(ev.link_id).map_or(LinkKind::Relay, |l| l.kind);
                let rec = DeliveryRecord {
                    sender: s.sender_id,
                    receiver: ev.dest,
                    entity: s.entity_id,
                    timestamp: s.timestamp,
                    arrived_at: self.now,
                    link_id: ev.link_id,
                    kind,
                };
                self.delays.push(rec.delay_ms() as f64);
                self.report.deliveries.push(rec);
            }
            let r = client.pm.on_network_message(&ev.payload, Some(ev.link_id), self.now, &mut client.game);
            self.report.processing.push(r.processing);
            self.send_all(ev.dest, r.outgoing)?;
        }
        Ok(())
    }

    fn apply_link_events(&mut self, events: &[&LinkEvent]) -> Result<(), RunError> {
        for ev in events {
            if let Some(available) = ev.available {
                self.sim.set_link_available(ev.link, available)?;
                for c in self.clients.values_mut() {
                    c.pm.on_link_change(ev.link, available, self.now);
                }
            }
        }
        Ok(())
    }

    fn sample(&mut self, entities: &BTreeMap<EntityId, (ClientId, &Motion)>) -> Result<(), RunError> {
        let t = self.now;
        for (&entity, &(owner, motion)) in entities {
            let truth = motion.at(t).pos;
            for (&viewer, client) in &self.clients {
                if viewer == owner {
                    continue;
                }
                let Some(shown) = client.pm.displayed(entity, t) else {
                    continue;
                };
                let divergence_m = truth.distance(shown);
                if !(divergence_m.is_finite() && divergence_m >= 0.0) {
                    return Err(self.invariant(format!("divergence {divergence_m} for entity {entity}")));
                }
                let row = MetricsRow {
                    tick_ms: t,
                    entity,
                    owner,
                    viewer,
                    truth,
                    shown,
                    divergence_m,
                    mode: client.pm.remote_mode(entity).unwrap_or(ConsistencyMode::Normal),
                    route: self.clients[&owner].pm.route_kind(viewer),
                    converging: client.pm.is_converging(entity, t),
                };
                self.divergence.push(divergence_m);
                if let Some(w) = self.metrics.as_mut() {
                    writeln!(w, "{}", row.csv_line())?;
                }
                if self.keep_rows {
                    self.report.rows.push(row);
                }
            }
        }
        Ok(())
    }
}

/// Drives the simulator, one player manager per client and the bot games
/// to the end of the scenario.
pub fn run(config: &ScenarioConfig, mut options: RunOptions) -> Result<RunReport, RunError> {
    config.validate()?;
    let started = Instant::now();

    let mut sim =
        Simulator::new(config.seed, config.links.iter().cloned()).with_jitter_model(config.toggles.jitter_model);
    if let Some(trace) = options.trace.take() {
        sim = sim.with_trace(trace);
    }
    for ev in &config.link_events {
        if let Some(delay) = ev.base_delay_ms {
            sim.set_link_delay(ev.link, delay, ev.at_ms)?;
        }
    }

    let entities: BTreeMap<EntityId, (ClientId, &Motion)> =
        config.entities().into_iter().map(|(id, (owner, spec))| (id, (owner, &spec.motion))).collect();
    let mut clients = BTreeMap::new();
    for c in &config.clients {
        let pm = PlayerManager::new(config.player_config(c.id)).map_err(|e| ScenarioError::Validation {
            field: format!("clients[id={}]", c.id),
            message: e.to_string(),
        })?;
        let motions = c.entities.iter().map(|e| (e.id, e.motion.clone())).collect();
        clients.insert(c.id, Client { pm, game: BotGame::new(motions) });
    }

    let mut fires: BTreeMap<u64, Vec<(ClientId, EntityId)>> = BTreeMap::new();
    for c in &config.clients {
        for f in &c.fire {
            for t in f.times() {
                fires.entry(t).or_default().push((c.id, f.entity));
            }
        }
    }
    let mut link_events: BTreeMap<u64, Vec<&LinkEvent>> = BTreeMap::new();
    for ev in &config.link_events {
        link_events.entry(ev.at_ms).or_default().push(ev);
    }

    let mut metrics = options.metrics.take();
    if let Some(w) = metrics.as_mut() {
        writeln!(w, "{METRICS_HEADER}")?;
    }
    let mut h = Harness {
        sim,
        clients,
        report: RunReport::default(),
        keep_rows: options.keep_rows,
        metrics,
        divergence: Accumulator::default(),
        delays: Accumulator::default(),
        now: 0,
    };

    let ids: Vec<ClientId> = h.clients.keys().copied().collect();
    for &id in &ids {
        let peers: Vec<_> = ids.iter().filter(|p| **p != id).filter_map(|p| config.capabilities(*p)).collect();
        let out =
            h.clients.get_mut(&id).expect("client").pm.start_session(&peers, 0).map_err(|e| {
                ScenarioError::Validation { field: format!("clients[id={id}]"), message: e.to_string() }
            })?;
        h.send_all(id, out)?;
    }

    let mut next_tick = 0u64;
    loop {
        let candidates = [
            Some(next_tick),
            h.sim.peek_time(),
            h.clients.values().filter_map(|c| c.pm.next_due()).min(),
            link_events.keys().next().copied(),
            fires.keys().next().copied(),
        ];
        let t = candidates.into_iter().flatten().min().expect("next tick is always a candidate");
        if t >= config.duration_ms {
            break;
        }
        if t < h.now {
            return Err(h.invariant(format!("clock moved back to {t}")));
        }
        h.now = t;
        h.sim.advance_to(t);

        if let Some(evs) = link_events.remove(&t) {
            h.apply_link_events(&evs)?;
        }
        h.deliver_due()?;
        for c in h.clients.values_mut() {
            c.pm.release_due(t, &mut c.game);
        }
        if let Some(list) = fires.remove(&t) {
            for (owner, entity) in list {
                let c = h.clients.get_mut(&owner).expect("validated owner");
                let out = c.pm.emit_event(entity, EventKind::Fire, [0; 8], t, &mut c.game);
                h.send_all(owner, out)?;
            }
        }
        if t == next_tick {
            for &id in &ids {
                let c = h.clients.get_mut(&id).expect("client");
                let out = c.pm.tick(t, &mut c.game);
                h.send_all(id, out)?;
            }
            h.sample(&entities)?;
            next_tick += config.tick_ms;
        }
    }

    let stats = h.sim.stats();
    if stats.sent != stats.delivered + stats.dropped + h.sim.in_flight() as u64 {
        return Err(h.invariant(format!("frame accounting broken: {stats:?}, {} in flight", h.sim.in_flight())));
    }
    h.sim.flush_trace()?;
    if let Some(w) = h.metrics.as_mut() {
        w.flush()?;
    }

    for (&id, c) in &h.clients {
        let switches = c.pm.route_switches().to_vec();
        if let Err((a, b)) = check_dwell(&switches, config.policies.route_hysteresis_ms) {
            return Err(h.invariant(format!("client {id} switched routes at {} and {}", a.at, b.at)));
        }
        h.report.route_switches.insert(id, switches);
        h.report.counters.insert(id, c.pm.counters());
    }

    let mut events = Vec::new();
    let mut unplayed = 0;
    for (&owner, c) in &h.clients {
        for (&(sender, seq), &local) in &c.game.first_playout {
            if sender != owner {
                continue;
            }
            for (&viewer, v) in &h.clients {
                if viewer == owner {
                    continue;
                }
                match v.game.playout(owner, seq) {
                    Some(remote) => events.push(EventRow {
                        event_seq: seq,
                        owner,
                        viewer,
                        local_playout_ms: local,
                        remote_playout_ms: remote,
                    }),
                    None => unplayed += 1,
                }
            }
        }
    }
    let mut diff = Accumulator::default();
    for e in &events {
        diff.push(e.diff_ms().unsigned_abs() as f64);
    }
    if let Some(mut w) = options.events.take() {
        writeln!(w, "{EVENTS_HEADER}")?;
        for e in &events {
            writeln!(w, "{}", e.csv_line())?;
        }
        w.flush()?;
    }

    let total = h.report.counters.values().fold(PmCounters::default(), |mut acc, c| {
        acc.received += c.received;
        acc.received_playable += c.received_playable;
        acc.late += c.late;
        acc.rollbacks += c.rollbacks;
        acc.duplicates += c.duplicates;
        acc.beyond_window += c.beyond_window;
        acc.decode_errors += c.decode_errors;
        acc.callback_failures += c.callback_failures;
        acc.state_sends += c.state_sends;
        acc.event_sends += c.event_sends;
        acc.no_route_drops += c.no_route_drops;
        acc
    });
    let mut micros: Vec<f64> = h.report.processing.iter().map(|d| d.as_secs_f64() * 1e6).collect();
    micros.sort_by(f64::total_cmp);

    h.report.summary = Summary {
        scenario: config.name.clone(),
        seed: config.seed,
        duration_ms: config.duration_ms,
        rows: h.divergence.n,
        mean_divergence_m: h.divergence.mean(),
        max_divergence_m: h.divergence.max,
        events: diff.n,
        mean_abs_display_diff_ms: diff.mean(),
        max_abs_display_diff_ms: diff.max,
        events_unplayed: unplayed,
        received: total.received,
        received_playable: total.received_playable,
        late: total.late,
        late_fraction: if total.received_playable == 0 {
            0.0
        } else {
            total.late as f64 / total.received_playable as f64
        },
        rollbacks: total.rollbacks,
        duplicates: total.duplicates,
        beyond_window: total.beyond_window,
        decode_errors: total.decode_errors,
        callback_failures: total.callback_failures,
        state_sends: total.state_sends,
        event_sends: total.event_sends,
        sent: stats.sent,
        delivered: stats.delivered,
        dropped: stats.dropped,
        no_route_drops: total.no_route_drops,
        route_switches: h.report.route_switches.values().map(|s| s.len() as u64).sum(),
        mean_state_delay_ms: h.delays.mean(),
        processing_samples: micros.len() as u64,
        processing_p50_us: percentile(&micros, 0.5),
        processing_p99_us: percentile(&micros, 0.99),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    h.report.events = events;
    Ok(h.report)
}
