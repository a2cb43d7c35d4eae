//! Deterministic delivery with jitter, loss and a delay change; the event
//! trace goes to stdout.

use sync_medium::netsim::{JitterModel, Simulator};
use sync_medium::overlay::{LinkKind, LinkSpec};
use sync_medium::pdu::{self, PingMessage};

fn main() {
    let link = LinkSpec {
        id: 1,
        a: 1,
        b: 2,
        kind: LinkKind::Relay,
        base_delay_ms: 100,
        jitter_ms: 50,
        loss_prob: 0.1,
        available: true,
    };
    let mut sim =
        Simulator::new(42, [link]).with_jitter_model(JitterModel::Uniform).with_trace(Box::new(std::io::stdout()));
    sim.set_link_delay(1, 300, 500).unwrap();

    for n in 0..10u64 {
        sim.advance_to(n * 100);
        let ping = PingMessage { sender_id: 1, nonce: n, timestamp: n * 100 };
        sim.send(1, 1, pdu::encode(&ping.into()).unwrap()).unwrap();
    }
    while sim.peek_time().is_some() {
        sim.step().unwrap();
    }
    sim.flush_trace().unwrap();
    println!("{:?}", sim.stats());
}
