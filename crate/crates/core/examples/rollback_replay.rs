//! A late event triggers undo of newer ones and an ordered replay.

use sync_medium::local_lag::Playable;
use sync_medium::pdu::{EventKind, EventMessage};
use sync_medium::rollback::{apply_directive, CallbackFailure, Delivery, DeliveryLog, ReplayTarget};

struct Game(Vec<u64>);

impl ReplayTarget for Game {
    fn undo(&mut self, msg: &Playable) -> Result<(), CallbackFailure> {
        println!("  undo  ts={}", msg.timestamp());
        self.0.pop();
        Ok(())
    }
    fn apply(&mut self, msg: &Playable) -> Result<(), CallbackFailure> {
        println!("  apply ts={}", msg.timestamp());
        self.0.push(msg.timestamp());
        Ok(())
    }
}

fn ev(seq: u32, ts: u64) -> Playable {
    Playable::Event(EventMessage {
        sender_id: 4,
        entity_id: 1,
        seq,
        timestamp: ts,
        kind: EventKind::Fire,
        payload: [0; 8],
    })
}

fn main() {
    let mut log = DeliveryLog::new(2000);
    let mut game = Game(Vec::new());
    let arrivals = [
        (ev(0, 100), 150),
        (ev(2, 130), 180),
        (ev(3, 140), 190),
        (ev(1, 120), 200),
        (ev(1, 120), 210),
        (ev(9, 10), 5000),
    ];
    for (msg, now) in arrivals {
        println!("t={now}: ts={} arrives", msg.timestamp());
        match log.on_deliver(msg, now) {
            Delivery::Apply => game.apply(&msg).unwrap(),
            Delivery::Rollback(directive) => {
                apply_directive(&mut game, &directive).unwrap();
            }
            Delivery::DropDuplicate => println!("  duplicate dropped"),
            Delivery::DropBeyondWindow => println!("  older than the history window, dropped"),
        }
    }
    println!("final order: {:?}", game.0);
}
