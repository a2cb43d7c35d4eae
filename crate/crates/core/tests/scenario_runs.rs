use std::cell::RefCell;
use std::io::Write;
use std::path::PathBuf;
use std::rc::Rc;

use sync_medium::overlay::LinkKind;
use sync_medium::scenario::{self, display_diff_from_csv, divergence_from_csv, RunOptions, ScenarioConfig};

#[derive(Clone, Default)]
struct Shared(Rc<RefCell<Vec<u8>>>);

impl Write for Shared {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.borrow_mut().write(buf)
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl Shared {
    fn text(&self) -> String {
        String::from_utf8(self.0.borrow().clone()).unwrap()
    }
}

fn load(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    scenario::load_scenario(path).unwrap()
}

#[test]
fn summary_matches_recomputation_from_csv() {
    for name in ["tankshots.json", "chicane.json", "arena.json"] {
        let config = load(name);
        let (csv, events) = (Shared::default(), Shared::default());
        let options = RunOptions {
            metrics: Some(Box::new(csv.clone())),
            events: Some(Box::new(events.clone())),
            ..RunOptions::default()
        };
        let s = scenario::run(&config, options).unwrap().summary;
        let div = divergence_from_csv(&csv.text()).unwrap();
        assert_eq!(div.n, s.rows, "{name}");
        assert_eq!(div.mean(), s.mean_divergence_m, "{name}");
        assert_eq!(div.max, s.max_divergence_m, "{name}");
        let diff = display_diff_from_csv(&events.text()).unwrap();
        assert_eq!(diff.n, s.events, "{name}");
        assert_eq!(diff.mean(), s.mean_abs_display_diff_ms, "{name}");
        assert_eq!(diff.max, s.max_abs_display_diff_ms, "{name}");
    }
}

#[test]
fn every_fire_event_plays_at_timestamp_plus_lag() {
    let config = load("tankshots.json");
    let report = scenario::run(&config, RunOptions::default()).unwrap();
    assert_eq!(report.events.len(), 120);
    for e in &report.events {
        assert_eq!(e.local_playout_ms, e.remote_playout_ms);
        // Fire times are on a 100 ms grid, played out 500 ms later.
        assert_eq!(e.local_playout_ms % 100, 0);
    }
    let first = report.events.iter().find(|e| e.owner == 1 && e.event_seq == 1).unwrap();
    assert_eq!(first.local_playout_ms, 1000 + 500);
}

#[test]
fn straight_line_car_is_exact_after_convergence() {
    let config = load("cruise.json");
    let report = scenario::run(&config, RunOptions { keep_rows: true, ..RunOptions::default() }).unwrap();
    let first = report.rows.first().unwrap();
    // First update leaves at 0 and arrives after the 250 ms relay delay.
    assert_eq!(first.tick_ms, 250);
    assert!(report.rows.iter().filter(|r| !r.converging).all(|r| r.divergence_m <= 1e-9));
    assert_eq!(report.summary.mean_state_delay_ms, 250.0);
}

#[test]
fn different_seeds_change_jittered_runs() {
    let mut a = load("carrace.json");
    a.duration_ms = 20_000;
    let mut b = a.clone();
    b.seed += 1;
    let run = |c: &ScenarioConfig| {
        let csv = Shared::default();
        scenario::run(c, RunOptions { metrics: Some(Box::new(csv.clone())), ..RunOptions::default() }).unwrap();
        csv.text()
    };
    assert_ne!(run(&a), run(&b));
    assert_eq!(run(&a), run(&a));
}

#[test]
fn minimal_single_client_run() {
    let config = ScenarioConfig::from_json(
        r#"{"duration_ms": 500, "clients": [{"id": 1, "entities": [{"id": 1, "class": "x", "motion": {"type": "static", "pos": [1, 2]}}]}]}"#,
    )
    .unwrap();
    let report = scenario::run(&config, RunOptions::default()).unwrap();
    assert_eq!(report.summary.rows, 0);
    assert_eq!(report.summary.sent, 0);
}

#[test]
fn link_outage_fails_over_and_recovers() {
    let mut config = load("arena.json");
    config.toggles.overlay = false;
    config.link_events = serde_json::from_str(
        r#"[{"at_ms": 3000, "link": 1, "available": false},
            {"at_ms": 6000, "link": 2, "available": false},
            {"at_ms": 8000, "link": 1, "available": true}]"#,
    )
    .unwrap();
    let report = scenario::run(&config, RunOptions { keep_rows: true, ..RunOptions::default() }).unwrap();
    let switches = &report.route_switches[&1];
    let failover = switches.iter().find(|s| s.at == 3000).expect("switch at the outage");
    assert!(failover.failover);
    assert_eq!(failover.to, Some(2));
    assert!(switches.iter().any(|s| s.at == 6000 && s.to.is_none()));
    assert!(switches.iter().any(|s| s.at == 8000 && s.to == Some(1)));
    let direct_used = report.deliveries.iter().any(|d| d.kind == LinkKind::Direct && d.timestamp >= 3000);
    assert!(direct_used);
    // Two seconds without a route: frames older than a second are dropped.
    assert!(report.summary.no_route_drops > 0);
    assert!(report.rows.iter().any(|r| r.tick_ms == 7000 && r.route.is_none()));
}

#[test]
fn step_change_reaches_new_delay() {
    let mut config = load("cruise.json");
    config.link_events = serde_json::from_str(r#"[{"at_ms": 20000, "link": 1, "base_delay_ms": 400}]"#).unwrap();
    let report = scenario::run(&config, RunOptions::default()).unwrap();
    assert!(report.deliveries.iter().filter(|d| d.timestamp < 20_000).all(|d| d.delay_ms() == 250));
    assert!(report.deliveries.iter().filter(|d| d.timestamp >= 20_000).all(|d| d.delay_ms() == 400));
}
