//! Local lag per object class, tightened in strong mode, and the playout
//! buffer releasing messages at their deadlines.

use sync_medium::critical_area::ConsistencyMode;
use sync_medium::local_lag::{Enqueued, LagPolicy, Playable, PlayoutBuffer};
use sync_medium::pdu::{EventKind, EventMessage};

fn shot(seq: u32, ts: u64) -> Playable {
    Playable::Event(EventMessage {
        sender_id: 1,
        entity_id: 9,
        seq,
        timestamp: ts,
        kind: EventKind::Fire,
        payload: [0; 8],
    })
}

fn main() {
    let mut policy = LagPolicy::new(100, 0.5).unwrap();
    policy.set_local_lag_value("bullet", 500).unwrap();
    for mode in [ConsistencyMode::Normal, ConsistencyMode::Strong] {
        println!("bullet lag in {} mode: {} ms", mode.as_str(), policy.effective_lag("bullet", mode));
    }
    println!("unknown class falls back to {} ms", policy.base_lag("tree"));

    let mut buffer = PlayoutBuffer::new();
    let arrivals = [(shot(0, 1000), 1250), (shot(2, 1100), 1300), (shot(1, 1050), 1400), (shot(3, 200), 1450)];
    for (msg, now) in arrivals {
        match buffer.enqueue(msg, "bullet", ConsistencyMode::Normal, &policy, now) {
            Enqueued::OnTime { due } => println!("seq {} buffered until {due}", msg.seq()),
            Enqueued::Late(entry) => println!("seq {} is late (due {}), hand to rollback", msg.seq(), entry.due),
        }
    }
    for now in [1499, 1500, 1550, 1600] {
        let released: Vec<u32> = buffer.release_due(now).iter().map(|e| e.msg.seq()).collect();
        println!("t={now}: released {released:?}");
    }
}
