//! Smoothed one-way delay under a step change from 100 ms to 300 ms.

use sync_medium::clock::{delay_from_timestamp, LatencyEstimator};

fn main() {
    let mut est = LatencyEstimator::<u32>::new(0.125);
    let peer = 2;
    for n in 0..40u64 {
        let sent = n * 50;
        let delay = if n < 10 { 100 } else { 300 };
        let reading = delay_from_timestamp(sent, sent + delay);
        let e = est.observe(peer, reading.delay_ms as f64, sent + delay).unwrap();
        println!("sample {n:2}: measured {:3} ms, estimate {e:7.2} ms", reading.delay_ms);
    }

    // A receiver clock behind the sender's yields a clamped, flagged reading.
    let skewed = delay_from_timestamp(1000, 990);
    println!("skewed reading: {skewed:?}");
}
