//! Encode a state update, inspect the frame, decode it back and show how
//! damaged frames are rejected.

use sync_medium::pdu::{self, Message, StateUpdate};
use sync_medium::Vec2;

fn main() {
    let update = StateUpdate {
        sender_id: 7,
        entity_id: 3,
        seq: 42,
        timestamp: 1500,
        pos: Vec2::new(12.5, -4.0),
        vel: Vec2::new(10.0, 0.0),
        critical: true,
    };
    let frame = pdu::encode(&update.into()).expect("finite fields");
    let hex: String = frame.iter().map(|b| format!("{b:02x}")).collect();
    println!("{} bytes: {hex}", frame.len());

    let header = pdu::peek_header(&frame).unwrap();
    println!("header: {header:?}");
    match pdu::decode(&frame).unwrap() {
        Message::State(back) => assert_eq!(back, update),
        other => panic!("unexpected {other:?}"),
    }

    println!("truncated: {}", pdu::decode(&frame[..30]).unwrap_err());
    let mut bad = frame.clone();
    bad[0] = 0;
    println!("bad magic: {}", pdu::decode(&bad).unwrap_err());
    let nan = StateUpdate { pos: Vec2::new(f64::NAN, 0.0), ..update };
    println!("non-finite: {}", pdu::encode(&nan.into()).unwrap_err());
}
