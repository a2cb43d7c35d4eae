//! Threshold-gated sending for an entity that turns, and the receiver's
//! blended correction.

use sync_medium::dead_reckoning::{predict, should_send, DeadReckoningPolicy, EntityKinematics, RemoteTrack};
use sync_medium::Vec2;

fn truth(t: u64) -> EntityKinematics {
    // East at 10 m/s for 2 s, then north.
    let s = t as f64 / 1000.0;
    if t < 2000 {
        EntityKinematics::new(Vec2::new(10.0 * s, 0.0), Vec2::new(10.0, 0.0), t)
    } else {
        EntityKinematics::new(Vec2::new(20.0, 10.0 * (s - 2.0)), Vec2::new(0.0, 10.0), t)
    }
}

fn main() {
    let policy = DeadReckoningPolicy::default();
    let mut last_sent: Option<EntityKinematics> = None;
    let mut track: Option<RemoteTrack> = None;
    let delay = 100;
    let mut in_flight: Vec<(u64, EntityKinematics)> = Vec::new();

    for t in (0..=4000).step_by(50) {
        let actual = truth(t);
        if should_send(&actual, last_sent.as_ref(), &policy, 1000, t) {
            let predicted = last_sent.map(|s| predict(&s, t).unwrap());
            println!("t={t:4} send pos={:?} (prediction was {predicted:?})", actual.pos);
            last_sent = Some(actual);
            in_flight.push((t + delay, actual));
        }
        for (_, state) in in_flight.iter().filter(|(due, _)| *due == t) {
            match track.as_mut() {
                Some(tr) => {
                    tr.correct(*state, &policy, t);
                }
                None => track = Some(RemoteTrack::new(*state, t)),
            }
        }
        if let Some(tr) = &track {
            if t % 250 == 0 {
                let shown = tr.displayed(&policy, t);
                println!(
                    "t={t:4} receiver shows {shown:?}, error {:.3} m{}",
                    shown.distance(actual.pos),
                    if tr.is_converging(&policy, t) { " (converging)" } else { "" }
                );
            }
        }
    }
}
