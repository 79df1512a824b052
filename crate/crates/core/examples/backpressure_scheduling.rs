//! Flow choice, loop penalty and next-hop selection from queue backlogs.
use bpnc::backpressure::{
    select_flow_multicast, select_next_hop, BacklogView, FlowId, HopCandidate, PenaltyTracker,
};

fn main() {
    let flows = vec![FlowId::unicast(1, 7).unwrap(), FlowId::new(1, [6, 7]).unwrap()];
    let mine: BacklogView = [((0, 7), 5), ((1, 6), 3), ((1, 7), 1)].into_iter().collect();
    let theirs: BacklogView = [((0, 7), 2), ((1, 6), 1), ((1, 7), 2)].into_iter().collect();

    let mut penalty = PenaltyTracker::new();
    let pick = |p: &PenaltyTracker| select_flow_multicast(&flows, &mine, &theirs, |s| p.alpha(s, 2));
    println!("flow choice with no history: {:?}", pick(&penalty));
    penalty.record_visit(0, 2);
    penalty.record_visit(0, 2);
    println!("after flow 0 visited node 2 twice (alpha {}): {:?}", penalty.alpha(0, 2), pick(&penalty));

    let candidates = [
        HopCandidate { neighbor: 4, channel: 1, rate: 3.0, flow: 0, score: 2.0 },
        HopCandidate { neighbor: 2, channel: 0, rate: 2.0, flow: 0, score: 3.0 },
        HopCandidate { neighbor: 3, channel: 2, rate: 7.0, flow: 1, score: 0.0 },
    ];
    for c in &candidates {
        println!("neighbor {} ch {}: utility {}", c.neighbor, c.channel, c.utility());
    }
    println!("selected: {:?}", select_next_hop(&candidates));
}
