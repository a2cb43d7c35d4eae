//! Fire events with sender-side local lag: both sides play each shot at the
//! same virtual time as long as the lag covers the network delay.

use std::path::PathBuf;

use sync_medium::scenario::{self, RunOptions};

fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/tankshots.json");
    let mut config = scenario::load_scenario(path).expect("scenario loads");
    for jitter in [0, 50, 300] {
        config.links[0].jitter_ms = jitter;
        let report = scenario::run(&config, RunOptions::default()).expect("run");
        let s = &report.summary;
        println!(
            "jitter ±{jitter:3} ms: {} shots, mean |display diff| {:.2} ms, max {} ms, late fraction {:.3}, rollbacks {}",
            s.events, s.mean_abs_display_diff_ms, s.max_abs_display_diff_ms, s.late_fraction, s.rollbacks
        );
        if jitter == 300 {
            println!("event_seq,owner,viewer,local_playout_ms,remote_playout_ms,diff_ms");
            for e in report.events.iter().filter(|e| e.diff_ms() != 0).take(5) {
                println!("{}", e.csv_line());
            }
        }
    }
}
