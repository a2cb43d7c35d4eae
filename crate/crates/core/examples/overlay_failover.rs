//! Route choice between a relay and a direct link: default relay, switch to
//! direct under critical proximity after the dwell time, fail over when a
//! link dies, queue frames while no route exists.

use sync_medium::overlay::{self, LinkKind, LinkSpec, PendingQueue, RouteDecision};

fn main() {
    let me = 1;
    let peer = 2;
    let mut links = vec![
        LinkSpec {
            id: 10,
            a: 1,
            b: 2,
            kind: LinkKind::Relay,
            base_delay_ms: 250,
            jitter_ms: 0,
            loss_prob: 0.0,
            available: true,
        },
        LinkSpec {
            id: 20,
            a: 1,
            b: 2,
            kind: LinkKind::Direct,
            base_delay_ms: 40,
            jitter_ms: 0,
            loss_prob: 0.0,
            available: true,
        },
    ];
    let estimate = |l: &LinkSpec| l.base_delay_ms as f64;

    let mut route = RouteDecision::new(peer, overlay::DEFAULT_ROUTE_HYSTERESIS_MS);
    for (t, critical) in [(0, false), (200, true), (600, true), (900, false), (1200, false)] {
        route = overlay::select_route(me, peer, &links, &estimate, critical, &route, t).unwrap();
        println!("t={t:4} critical={critical:5} -> link {:?}", route.chosen);
    }

    route = overlay::on_link_change(me, &mut links, 10, false, &estimate, &route, 1300).unwrap();
    println!("relay down at 1300 -> link {:?}", route.chosen);
    let lost = overlay::on_link_change(me, &mut links, 20, false, &estimate, &route, 1350);
    println!("direct down at 1350 -> {lost:?}");

    let mut queue = PendingQueue::new(overlay::DEFAULT_MAX_QUEUE_MS);
    for t in (1350..2600).step_by(100) {
        queue.push(peer, t, vec![0; 4]);
        queue.expire(t);
    }
    println!("{} frames waiting, {} dropped after waiting too long", queue.len(), queue.dropped());
}
