//! Two player managers talking over the simulator without the scenario harness.

use sync_medium::critical_area::ConsistencyMode;
use sync_medium::dead_reckoning::EntityKinematics;
use sync_medium::netsim::Simulator;
use sync_medium::overlay::{LinkKind, LinkSpec, PeerCapabilities};
use sync_medium::pdu::{EventKind, EventMessage};
use sync_medium::player_manager::{GameCallbacks, LocalEntity, Outgoing, PlayerManager, PlayerManagerConfig};
use sync_medium::rollback::CallbackFailure;
use sync_medium::{ClientId, EntityId, Vec2};

#[derive(Default)]
struct Stack {
    applied: Vec<u64>,
    undos: usize,
}

impl GameCallbacks for Stack {
    fn apply_remote_state(&mut self, _: EntityId, _: EntityKinematics) {}
    fn apply_event(&mut self, e: &EventMessage, _: u64) -> Result<(), CallbackFailure> {
        self.applied.push(e.timestamp);
        Ok(())
    }
    fn undo_event(&mut self, e: &EventMessage, _: u64) -> Result<(), CallbackFailure> {
        match self.applied.pop() {
            Some(ts) if ts == e.timestamp => {
                self.undos += 1;
                Ok(())
            }
            other => Err(CallbackFailure(format!("undo {} with top {other:?}", e.timestamp))),
        }
    }
    fn query_local_state(&mut self, _: EntityId, now: u64) -> EntityKinematics {
        EntityKinematics::new(Vec2::ZERO, Vec2::ZERO, now)
    }
    fn notify_mode(&mut self, _: EntityId, _: ConsistencyMode) {}
}

fn pm(id: ClientId, link: &LinkSpec) -> PlayerManager {
    let mut c = PlayerManagerConfig::new(id);
    c.links = vec![link.clone()];
    c.local_entities = vec![LocalEntity { id, class: "gun".into() }];
    c.entity_classes.insert(3 - id, "gun".into());
    c.ping_interval_ms = None;
    let mut pm = PlayerManager::new(c).unwrap();
    pm.start_session(&[PeerCapabilities { peer_id: 3 - id, direct_address_known: true, has_gps_clock: true }], 0)
        .unwrap();
    pm
}

fn send(sim: &mut Simulator, from: ClientId, out: Vec<Outgoing>) {
    for o in out {
        sim.send(o.link_id, from, o.frame).unwrap();
    }
}

#[test]
fn jittered_events_end_in_timestamp_order() {
    for seed in 0..20 {
        let link = LinkSpec {
            id: 1,
            a: 1,
            b: 2,
            kind: LinkKind::Relay,
            base_delay_ms: 100,
            jitter_ms: 80,
            loss_prob: 0.0,
            available: true,
        };
        let mut sim = Simulator::new(seed, [link.clone()]);
        let mut shooter = pm(1, &link);
        let mut target = pm(2, &link);
        let mut shooter_game = Stack::default();
        let mut target_game = Stack::default();
        let mut fired = Vec::new();
        for t in 0..4000u64 {
            sim.advance_to(t);
            while sim.peek_time() == Some(t) {
                let ev = sim.step().unwrap();
                let r = target.on_network_message(&ev.payload, Some(ev.link_id), t, &mut target_game);
                send(&mut sim, 2, r.outgoing);
            }
            if t % 30 == 0 && t < 3000 {
                fired.push(t);
                let out = shooter.emit_event(1, EventKind::Fire, [0; 8], t, &mut shooter_game);
                send(&mut sim, 1, out);
            }
        }
        assert_eq!(target_game.applied, fired, "seed {seed}");
        assert_eq!(shooter_game.applied, fired);
        assert!(target.counters().rollbacks > 0, "seed {seed}");
        assert_eq!(target_game.undos as u64 > 0, target.counters().rollbacks > 0);
        assert_eq!(sim.stats().sent, sim.stats().delivered);
    }
}

#[test]
fn lag_covering_jitter_needs_no_rollback() {
    let link = LinkSpec {
        id: 1,
        a: 1,
        b: 2,
        kind: LinkKind::Relay,
        base_delay_ms: 100,
        jitter_ms: 80,
        loss_prob: 0.0,
        available: true,
    };
    let mut sim = Simulator::new(5, [link.clone()]);
    let mut shooter = pm(1, &link);
    let mut c = target_config(&link);
    c.lag.set_local_lag_value("gun", 200).unwrap();
    let mut target = PlayerManager::new(c).unwrap();
    target
        .start_session(&[PeerCapabilities { peer_id: 1, direct_address_known: true, has_gps_clock: true }], 0)
        .unwrap();
    let mut g1 = Stack::default();
    let mut g2 = Stack::default();
    for t in 0..3000u64 {
        sim.advance_to(t);
        while sim.peek_time() == Some(t) {
            let ev = sim.step().unwrap();
            target.on_network_message(&ev.payload, Some(ev.link_id), t, &mut g2);
        }
        target.release_due(t, &mut g2);
        if t % 25 == 0 && t < 2500 {
            let out = shooter.emit_event(1, EventKind::Fire, [0; 8], t, &mut g1);
            send(&mut sim, 1, out);
        }
    }
    assert_eq!(target.counters().rollbacks, 0);
    assert_eq!(target.counters().late, 0);
    assert_eq!(g2.applied, g1.applied);
}

fn target_config(link: &LinkSpec) -> PlayerManagerConfig {
    let mut c = PlayerManagerConfig::new(2);
    c.links = vec![link.clone()];
    c.entity_classes.insert(1, "gun".into());
    c.ping_interval_ms = None;
    c
}
