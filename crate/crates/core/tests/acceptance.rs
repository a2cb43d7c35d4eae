//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use sync_medium::clock::{delay_from_timestamp, LatencyEstimator};
use sync_medium::critical_area::Region;
use sync_medium::local_lag::Playable;
use sync_medium::netsim::{SimRng, Simulator};
use sync_medium::overlay::{check_dwell, LinkKind, LinkSpec};
use sync_medium::pdu::{self, EventKind, EventMessage, Message, MessageType, StateUpdate};
use sync_medium::rollback::{apply_directive, CallbackFailure, Delivery, DeliveryLog, ReplayTarget};
use sync_medium::scenario::{self, RunOptions, RunReport, ScenarioConfig};
use sync_medium::Vec2;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn load(name: &str) -> ScenarioConfig {
    scenario::load_scenario(scenario_path(name)).expect("shipped scenario loads")
}

fn run_rows(config: &ScenarioConfig) -> RunReport {
    scenario::run(config, RunOptions { keep_rows: true, ..RunOptions::default() }).expect("run completes")
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn processing_overhead() -> Outcome {
    let config = load("carrace.json");
    let started = Instant::now();
    let report = scenario::run(&config, RunOptions::default()).map_err(|e| e.to_string())?;
    let wall = started.elapsed();
    let s = &report.summary;
    let detail = format!(
        "{} messages, {} clients, p50 {:.3} us, p99 {:.3} us, run {:.2} s",
        s.received,
        config.clients.len(),
        s.processing_p50_us,
        s.processing_p99_us,
        wall.as_secs_f64()
    );
    check(
        s.received >= 10_000
            && config.clients.len() == 2
            && s.processing_p99_us <= 5_000.0
            && s.processing_p50_us <= 1_000.0
            && wall < Duration::from_secs(10),
        detail,
    )
}

fn local_lag_exactness() -> Outcome {
    let mut config = load("tankshots.json");
    let link = &config.links[0];
    let lag = config.policies.lag_ms["tank"];
    if link.base_delay_ms != 250 || link.jitter_ms != 0 || link.loss_prob != 0.0 || lag != 500 {
        return Err("tankshots.json does not have d=250, jitter 0, loss 0, L=500".into());
    }
    if !config.toggles.sender_side_lag {
        return Err("sender-side lag is off".into());
    }
    let exact = run_rows(&config).summary;

    config.links[0].jitter_ms = 50;
    let jittered = run_rows(&config).summary;
    let detail = format!(
        "jitter 0: {} events, mean |diff| {} ms; jitter 50: {} events, mean |diff| {} ms, late fraction {}",
        exact.events,
        exact.mean_abs_display_diff_ms,
        jittered.events,
        jittered.mean_abs_display_diff_ms,
        jittered.late_fraction
    );
    check(
        exact.events >= 100
            && exact.events_unplayed == 0
            && exact.mean_abs_display_diff_ms == 0.0
            && jittered.events >= 100
            && jittered.mean_abs_display_diff_ms <= 50.0
            && jittered.late_fraction == 0.0,
        detail,
    )
}

#[derive(Default)]
struct Applied(Vec<u64>);

impl ReplayTarget for Applied {
    fn undo(&mut self, msg: &Playable) -> Result<(), CallbackFailure> {
        match self.0.pop() {
            Some(ts) if ts == msg.timestamp() => Ok(()),
            other => Err(CallbackFailure(format!("undo {} but top is {other:?}", msg.timestamp()))),
        }
    }

    fn apply(&mut self, msg: &Playable) -> Result<(), CallbackFailure> {
        self.0.push(msg.timestamp());
        Ok(())
    }
}

fn event(seq: u32, ts: u64) -> Playable {
    Playable::Event(EventMessage {
        sender_id: 1,
        entity_id: 1,
        seq,
        timestamp: ts,
        kind: EventKind::Fire,
        payload: [0; 8],
    })
}

/// Feeds messages through a delivery log; returns the final applied order.
fn replay(arrivals: impl IntoIterator<Item = (Playable, u64)>) -> Result<Vec<u64>, String> {
    let mut log = DeliveryLog::new(2000);
    let mut target = Applied::default();
    for (msg, now) in arrivals {
        match log.on_deliver(msg, now) {
            Delivery::Apply => target.apply(&msg).map_err(|e| e.0)?,
            Delivery::Rollback(d) => {
                apply_directive(&mut target, &d).map_err(|e| e.0)?;
            }
            other => return Err(format!("unexpected {other:?}")),
        }
    }
    Ok(target.0)
}

fn permutations(items: &[u64]) -> Vec<Vec<u64>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn rollback_order() -> Outcome {
    let stamps = [100, 120, 130, 140, 155, 170];
    let perms = permutations(&stamps);
    let mut perm_ok = 0;
    for p in &perms {
        let arrivals = p.iter().enumerate().map(|(i, &ts)| (event(ts as u32, ts), 200 + i as u64));
        if replay(arrivals)? == stamps {
            perm_ok += 1;
        }
    }

    let link = LinkSpec {
        id: 1,
        a: 1,
        b: 2,
        kind: LinkKind::Relay,
        base_delay_ms: 100,
        jitter_ms: 40,
        loss_prob: 0.0,
        available: true,
    };
    let mut stream_ok = 0;
    let mut reordered = 0;
    for seed in 0..1000u64 {
        let mut sim = Simulator::new(seed, [link.clone()]);
        let mut rng = SimRng::new(seed ^ 0x5eed);
        let mut t = 0;
        for seq in 0..50u32 {
            t += 1 + rng.next_u64() % 20;
            sim.advance_to(t);
            let ev =
                EventMessage { sender_id: 1, entity_id: 1, seq, timestamp: t, kind: EventKind::Fire, payload: [0; 8] };
            sim.send(1, 1, pdu::encode(&ev.into()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        }
        let mut arrivals = Vec::new();
        while sim.peek_time().is_some() {
            let d = sim.step().map_err(|e| e.to_string())?;
            let Ok(Message::Event(ev)) = pdu::decode(&d.payload) else {
                return Err("undecodable frame".into());
            };
            arrivals.push((Playable::Event(ev), d.deliver_at));
        }
        let mut sorted: Vec<u64> = arrivals.iter().map(|(m, _)| m.timestamp()).collect();
        let arrival_order = sorted.clone();
        sorted.sort_unstable();
        if arrival_order != sorted {
            reordered += 1;
        }
        if replay(arrivals)? == sorted {
            stream_ok += 1;
        }
    }
    check(
        perm_ok == 720 && stream_ok == 1000 && reordered > 900,
        format!("{perm_ok}/{} permutations, {stream_ok}/1000 random streams ({reordered} reordered)", perms.len()),
    )
}

fn dead_reckoning_bound() -> Outcome {
    let config = load("waypoints.json");
    let link = &config.links[0];
    let motion = &config.clients[0].entities[0].motion;
    let v_max = motion.max_speed();
    let d = link.base_delay_ms as f64;
    let theta = config.policies.threshold_m;
    let bound = theta + v_max * d / 1000.0 + v_max * config.tick_ms as f64 / 1000.0;
    if link.jitter_ms != 0 || v_max != 10.0 || d != 250.0 || theta != 0.5 {
        return Err("waypoints.json does not have v_max=10, d=250, jitter 0, theta 0.5".into());
    }
    let report = run_rows(&config);
    let settled: Vec<f64> = report.rows.iter().filter(|r| !r.converging).map(|r| r.divergence_m).collect();
    let worst = settled.iter().copied().fold(0.0, f64::max);
    let corrections = report.summary.state_sends;

    let cruise = load("cruise.json");
    let cruise_report = run_rows(&cruise);
    let cruise_settled: Vec<f64> =
        cruise_report.rows.iter().filter(|r| !r.converging).map(|r| r.divergence_m).collect();
    let cruise_worst = cruise_settled.iter().copied().fold(0.0, f64::max);

    check(
        worst <= bound
            && settled.len() > 1000
            && corrections > 20
            && cruise_worst <= 1e-9
            && cruise_settled.len() > 500,
        format!(
            "waypoints: max settled divergence {worst:.4} m <= {bound} m over {} ticks ({corrections} updates); \
             constant velocity: max {cruise_worst:e} m over {} ticks",
            settled.len(),
            cruise_settled.len()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut names: Vec<String> = std::fs::read_dir(scenario_path(""))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();
    let mut identical = 0;
    for name in &names {
        let config = load(name);
        let mut outputs = Vec::new();
        for run in 0..2 {
            let csv = dir.path().join(format!("{name}.{run}.csv"));
            let trace = dir.path().join(format!("{name}.{run}.tsv"));
            let open = |p: &PathBuf| -> Result<Box<dyn std::io::Write>, String> {
                Ok(Box::new(std::fs::File::create(p).map_err(|e| e.to_string())?))
            };
            let options =
                RunOptions { metrics: Some(open(&csv)?), trace: Some(open(&trace)?), ..RunOptions::default() };
            scenario::run(&config, options).map_err(|e| e.to_string())?;
            let read = |p: &PathBuf| std::fs::read(p).map_err(|e| e.to_string());
            outputs.push((read(&csv)?, read(&trace)?));
        }
        if outputs[0] == outputs[1] && !outputs[0].0.is_empty() && !outputs[0].1.is_empty() {
            identical += 1;
        }
    }
    check(
        identical == names.len() && names.len() >= 2,
        format!("{identical}/{} shipped scenarios byte-identical (CSV and trace): {}", names.len(), names.join(", ")),
    )
}

fn inside_any(regions: &[Region], p: Vec2) -> bool {
    regions.iter().any(|r| r.contains(p, &Default::default()).unwrap_or(false))
}

fn critical_tightening() -> Outcome {
    let strong = load("chicane.json");
    if !strong.toggles.strong_mode || strong.toggles.overlay {
        return Err("chicane.json must enable strong mode and disable the overlay".into());
    }
    let mut normal = strong.clone();
    normal.toggles.strong_mode = false;
    let motion = &strong.clients[0].entities[0].motion;
    let owner = strong.clients[0].id;
    let in_window = |t: u64| inside_any(&strong.regions, motion.at(t).pos);

    let measure = |config: &ScenarioConfig| {
        let report = run_rows(config);
        let divs: Vec<f64> = report.rows.iter().filter(|r| in_window(r.tick_ms)).map(|r| r.divergence_m).collect();
        let sends = report
            .sends
            .iter()
            .filter(|s| s.from == owner && s.msg_type == MessageType::StateUpdate && in_window(s.at))
            .count();
        (divs.iter().sum::<f64>() / divs.len().max(1) as f64, sends, divs.len())
    };
    let (div_strong, sends_strong, ticks) = measure(&strong);
    let (div_normal, sends_normal, _) = measure(&normal);
    check(
        ticks > 0 && div_strong < div_normal && sends_strong > sends_normal,
        format!(
            "{ticks} in-region ticks: mean divergence {div_strong:.4} m (strong) vs {div_normal:.4} m (normal); \
             sends {sends_strong} vs {sends_normal}"
        ),
    )
}

fn overlay_benefit() -> Outcome {
    let on = load("arena.json");
    if !on.toggles.overlay || !on.toggles.strong_mode {
        return Err("arena.json must enable the overlay and strong mode".into());
    }
    let direct = on.links.iter().find(|l| l.kind == LinkKind::Direct).map(|l| l.base_delay_ms);
    let relay = on.links.iter().find(|l| l.kind == LinkKind::Relay).map(|l| l.base_delay_ms);
    if direct != Some(40) || relay != Some(250) {
        return Err("arena.json needs a 40 ms direct link and a 250 ms relay".into());
    }
    let mut off = on.clone();
    off.toggles.overlay = false;
    let motions: Vec<_> = on.clients.iter().map(|c| &c.entities[0].motion).collect();
    let shared = |t: u64| motions.iter().all(|m| inside_any(&on.regions, m.at(t).pos));

    let measure = |config: &ScenarioConfig| {
        let report = run_rows(config);
        let delays: Vec<u64> = report.deliveries.iter().filter(|d| shared(d.timestamp)).map(|d| d.delay_ms()).collect();
        let mean = delays.iter().sum::<u64>() as f64 / delays.len().max(1) as f64;
        let dwell_ok =
            report.route_switches.values().all(|s| check_dwell(s, config.policies.route_hysteresis_ms).is_ok());
        let switches: usize = report.route_switches.values().map(Vec::len).sum();
        (mean, delays.len(), dwell_ok, switches)
    };
    let (mean_on, n_on, dwell_on, switches_on) = measure(&on);
    let (mean_off, n_off, dwell_off, _) = measure(&off);
    check(
        n_on > 0 && n_off > 0 && mean_off - mean_on >= 150.0 && dwell_on && dwell_off && switches_on > 0,
        format!(
            "shared-critical mean delay {mean_on:.1} ms over {n_on} updates (overlay) vs {mean_off:.1} ms over {n_off} \
             (relay only), gain {:.1} ms; {switches_on} route switches, dwell respected: {}",
            mean_off - mean_on,
            dwell_on && dwell_off
        ),
    )
}

fn latency_reestimation() -> Outcome {
    let alpha = 0.125;
    let link = LinkSpec {
        id: 1,
        a: 1,
        b: 2,
        kind: LinkKind::Relay,
        base_delay_ms: 100,
        jitter_ms: 0,
        loss_prob: 0.0,
        available: true,
    };
    let step_at = 5000;
    let mut sim = Simulator::new(1, [link]);
    sim.set_link_delay(1, 300, step_at).map_err(|e| e.to_string())?;
    for (seq, t) in (0..10_000).step_by(50).enumerate() {
        sim.advance_to(t);
        let m = StateUpdate {
            sender_id: 1,
            entity_id: 1,
            seq: seq as u32,
            timestamp: t,
            pos: Vec2::ZERO,
            vel: Vec2::ZERO,
            critical: false,
        };
        sim.send(1, 1, pdu::encode(&m.into()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    }
    let mut est = LatencyEstimator::<u32>::new(alpha);
    let mut after_step = 0usize;
    let mut reached_at = None;
    let mut at_25 = None;
    let mut seen_ts = BTreeSet::new();
    while sim.peek_time().is_some() {
        let ev = sim.step().map_err(|e| e.to_string())?;
        let Ok(Message::State(s)) = pdu::decode(&ev.payload) else {
            return Err("undecodable frame".into());
        };
        seen_ts.insert(s.timestamp);
        let e = est.observe(1, delay_from_timestamp(s.timestamp, ev.deliver_at).delay_ms as f64, ev.deliver_at);
        if s.timestamp >= step_at {
            after_step += 1;
            let e = e.unwrap_or(0.0);
            if reached_at.is_none() && (e - 300.0).abs() <= 0.05 * 300.0 {
                reached_at = Some(after_step);
            }
            if after_step == 25 {
                at_25 = Some(e);
            }
        }
    }
    let at_25 = at_25.ok_or("fewer than 25 samples after the step")?;
    let closed_form = 300.0 - 200.0 * (1.0f64 - alpha).powi(25);
    check(
        reached_at.is_some_and(|n| n <= 25) && (at_25 - closed_form).abs() < 1e-9 && seen_ts.len() == 200,
        format!(
            "within 5% of 300 ms after {} samples; estimate after 25 = {at_25:.4} ms (closed form {closed_form:.4})",
            reached_at.map_or("never".into(), |n| n.to_string())
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("processing overhead", processing_overhead),
        ("local-lag exactness", local_lag_exactness),
        ("rollback order equivalence", rollback_order),
        ("dead-reckoning error bound", dead_reckoning_bound),
        ("determinism", determinism),
        ("critical-region tightening", critical_tightening),
        ("overlay benefit", overlay_benefit),
        ("latency re-estimation", latency_reestimation),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
