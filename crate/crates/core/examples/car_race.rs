//! Two clients racing bot cars for one minute of the shipped car race.

use std::path::PathBuf;

use sync_medium::scenario::{self, RunOptions};

fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/carrace.json");
    let mut config = scenario::load_scenario(path).expect("scenario loads");
    config.duration_ms = 60_000;
    let report = scenario::run(&config, RunOptions { keep_rows: true, ..RunOptions::default() }).expect("run");

    print!("{}", report.summary);
    let worst = report.rows.iter().max_by(|a, b| a.divergence_m.total_cmp(&b.divergence_m)).unwrap();
    println!(
        "worst moment: car {} seen by client {} at {} ms, {:.2} m off",
        worst.entity, worst.viewer, worst.tick_ms, worst.divergence_m
    );
    for (client, switches) in &report.route_switches {
        println!("client {client}: {} route switches", switches.len());
    }
}
