//! Receiver-side RTS arbitration.
//!
//! Covers the three conflict types with one rule: among every RTS the node
//! heard on the channel (plus its own pending one), the highest utility wins,
//! lower transmitter id on ties.
//! - half-duplex: two nodes RTS each other; the lower-utility one answers.
//! - same receiver: several RTS to one node; only the winner gets a CTS.
//! - hidden node: a louder RTS between two other nodes silences the receiver.

use crate::backpressure::NodeId;
use crate::protocol::wire::Rts;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    /// Answer the winner with a CTS.
    SendCts { to: NodeId, flow: u8 },
    /// Our own request wins; keep waiting for its CTS.
    Insist,
    /// Someone else's exchange wins; stay quiet.
    Silent,
}

fn beats(a: &Rts, b: &Rts) -> bool {
    a.utility_q > b.utility_q || (a.utility_q == b.utility_q && a.tx < b.tx)
}

/// Decide from locally heard requests only. Repeated RTS from one transmitter
/// count once (the last one heard).
pub fn resolve(me: NodeId, own: Option<&Rts>, heard: &[Rts]) -> Resolution {
    let mut latest: Vec<Rts> = Vec::new();
    for r in heard.iter().filter(|r| r.tx != me) {
        match latest.iter_mut().find(|x| x.tx == r.tx) {
            Some(x) => *x = *r,
            None => latest.push(*r),
        }
    }
    let mut winner: Option<&Rts> = own;
    for r in &latest {
        if winner.is_none_or(|w| beats(r, w)) {
            winner = Some(r);
        }
    }
    match winner {
        Some(w) if w.tx == me => Resolution::Insist,
        Some(w) if w.rx == me => Resolution::SendCts { to: w.tx, flow: w.flow },
        _ => Resolution::Silent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rts(tx: NodeId, rx: NodeId, u: u32) -> Rts {
        Rts { tx, rx, channel: 0, flow: 0, utility_q: u }
    }

    #[test]
    fn same_receiver_highest_utility() {
        assert_eq!(resolve(5, None, &[rts(1, 5, 4), rts(2, 5, 6)]), Resolution::SendCts { to: 2, flow: 0 });
    }

    #[test]
    fn half_duplex_lower_utility_receives() {
        // i = 1 -> j = 2 with U 6, j -> i with U 4
        let i_req = rts(1, 2, 6);
        let j_req = rts(2, 1, 4);
        assert_eq!(resolve(2, Some(&j_req), &[i_req]), Resolution::SendCts { to: 1, flow: 0 });
        assert_eq!(resolve(1, Some(&i_req), &[j_req]), Resolution::Insist);
    }

    #[test]
    fn tie_goes_to_lower_id() {
        assert_eq!(resolve(9, None, &[rts(7, 9, 5), rts(3, 9, 5)]), Resolution::SendCts { to: 3, flow: 0 });
    }

    #[test]
    fn hidden_node_silences_receiver() {
        assert_eq!(resolve(2, None, &[rts(1, 2, 4), rts(3, 4, 6)]), Resolution::Silent);
        assert_eq!(resolve(2, None, &[]), Resolution::Silent);
    }

    #[test]
    fn later_rts_from_same_sender_supersedes() {
        let heard = [rts(1, 5, 4), rts(2, 5, 6), rts(3, 8, 5), rts(1, 5, 7)];
        let base = resolve(5, None, &heard);
        assert_eq!(base, Resolution::SendCts { to: 1, flow: 0 });
        let mut rev = heard;
        rev.reverse();
        // the later RTS from node 1 now comes first and is superseded
        assert_eq!(resolve(5, None, &rev), Resolution::SendCts { to: 2, flow: 0 });
    }
}
