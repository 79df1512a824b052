//! Backlog bookkeeping and the scheduling math: penalized differential
//! backlog per flow, spectrum utility, next-hop choice, and the per-destination
//! virtual queues that extend it to multicast.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

pub type NodeId = u8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackpressureError {
    #[error("flow from node {0} has no destinations")]
    EmptyDestinations(NodeId),
    #[error("flow source {0} is also listed as a destination")]
    SourceIsDestination(NodeId),
}

/// A flow is its source plus an ordered set of destinations; a single
/// destination is unicast.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct FlowId {
    pub source: NodeId,
    pub destinations: Vec<NodeId>,
}

impl FlowId {
    pub fn new(source: NodeId, destinations: impl IntoIterator<Item = NodeId>) -> Result<Self, BackpressureError> {
        let mut destinations: Vec<NodeId> = destinations.into_iter().collect();
        destinations.sort_unstable();
        destinations.dedup();
        if destinations.is_empty() {
            return Err(BackpressureError::EmptyDestinations(source));
        }
        if destinations.contains(&source) {
            return Err(BackpressureError::SourceIsDestination(source));
        }
        Ok(FlowId { source, destinations })
    }

    pub fn unicast(source: NodeId, destination: NodeId) -> Result<Self, BackpressureError> {
        Self::new(source, [destination])
    }

    pub fn is_multicast(&self) -> bool {
        self.destinations.len() > 1
    }

    pub fn has_destination(&self, node: NodeId) -> bool {
        self.destinations.binary_search(&node).is_ok()
    }
}

/// Anything that can report a virtual backlog `Q^{s,d}`.
pub trait Backlog {
    fn backlog(&self, flow: usize, dest: NodeId) -> u32;
}

/// Reported backlogs, keyed by (flow index, destination). Missing keys are 0.
pub type BacklogView = BTreeMap<(usize, NodeId), u32>;

impl Backlog for BacklogView {
    fn backlog(&self, flow: usize, dest: NodeId) -> u32 {
        self.get(&(flow, dest)).copied().unwrap_or(0)
    }
}

/// Per (flow, destination) FIFO of queued items. The queue length is the
/// virtual backlog.
#[derive(Debug, Clone)]
pub struct VirtualQueueSet<T> {
    owner: NodeId,
    queues: BTreeMap<(usize, NodeId), VecDeque<T>>,
}

impl<T> VirtualQueueSet<T> {
    pub fn new(owner: NodeId) -> Self {
        VirtualQueueSet { owner, queues: BTreeMap::new() }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    /// Queue an item. A node never holds a queue for itself as destination.
    pub fn enqueue(&mut self, flow: usize, dest: NodeId, item: T) -> bool {
        if dest == self.owner {
            return false;
        }
        self.queues.entry((flow, dest)).or_default().push_back(item);
        true
    }

    pub fn dequeue(&mut self, flow: usize, dest: NodeId) -> Option<T> {
        self.queues.get_mut(&(flow, dest))?.pop_front()
    }

    pub fn front(&self, flow: usize, dest: NodeId) -> Option<&T> {
        self.queues.get(&(flow, dest))?.front()
    }

    pub fn total(&self) -> u64 {
        self.queues.values().map(|q| q.len() as u64).sum()
    }

    /// Every nonzero backlog, in key order.
    pub fn snapshot(&self) -> BacklogView {
        self.queues
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(k, q)| (*k, q.len() as u32))
            .collect()
    }
}

impl<T> Backlog for VirtualQueueSet<T> {
    fn backlog(&self, flow: usize, dest: NodeId) -> u32 {
        self.queues.get(&(flow, dest)).map_or(0, |q| q.len() as u32)
    }
}

/// Visit counts `f_j^s` and the loop penalty `alpha_j^s = 1 / f_j^s`.
#[derive(Debug, Clone, Default)]
pub struct PenaltyTracker {
    visits: BTreeMap<(usize, NodeId), u32>,
}

impl PenaltyTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn visits(&self, flow: usize, node: NodeId) -> u32 {
        self.visits.get(&(flow, node)).copied().unwrap_or(0)
    }

    pub fn alpha(&self, flow: usize, node: NodeId) -> f64 {
        match self.visits(flow, node) {
            0 | 1 => 1.0,
            f => 1.0 / f as f64,
        }
    }

    /// Count one more visit of `flow` at `node`; returns the new penalty.
    pub fn record_visit(&mut self, flow: usize, node: NodeId) -> f64 {
        *self.visits.entry((flow, node)).or_insert(0) += 1;
        self.alpha(flow, node)
    }
}

/// `alpha * sum_d [Q_i^{s,d} - Q_j^{s,d}]^+` over the flow's destinations.
/// The neighbor's own queue counts as empty.
pub fn flow_score(flow_idx: usize, flow: &FlowId, qi: &impl Backlog, qj: &impl Backlog, alpha: f64) -> f64 {
    let diff: u64 = flow
        .destinations
        .iter()
        .map(|&d| qi.backlog(flow_idx, d).saturating_sub(qj.backlog(flow_idx, d)) as u64)
        .sum();
    diff as f64 * alpha
}

/// Destinations whose differential toward the neighbor is positive.
pub fn positive_destinations(flow_idx: usize, flow: &FlowId, qi: &impl Backlog, qj: &impl Backlog) -> Vec<NodeId> {
    flow.destinations
        .iter()
        .copied()
        .filter(|&d| qi.backlog(flow_idx, d) > qj.backlog(flow_idx, d))
        .collect()
}

/// Argmax over flows of the summed, penalized positive differential.
/// Ties go to the lower flow index; `None` when every score is zero.
pub fn select_flow_multicast(
    flows: &[FlowId],
    qi: &impl Backlog,
    qj: &impl Backlog,
    alpha: impl Fn(usize) -> f64,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (s, flow) in flows.iter().enumerate() {
        let score = flow_score(s, flow, qi, qj, alpha(s));
        if score > 0.0 && best.is_none_or(|(_, b)| score > b) {
            best = Some((s, score));
        }
    }
    best
}

/// Unicast selection: the multicast rule summed over one destination.
pub fn select_flow_unicast(
    flows: &[FlowId],
    qi: &impl Backlog,
    qj: &impl Backlog,
    alpha: impl Fn(usize) -> f64,
) -> Option<(usize, f64)> {
    select_flow_multicast(flows, qi, qj, alpha)
}

/// Link rate times penalized backlog differential.
pub fn spectrum_utility(rate: f64, score: f64) -> f64 {
    rate.max(0.0) * score.max(0.0)
}

/// One (neighbor, channel) option with its best flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopCandidate {
    pub neighbor: NodeId,
    pub channel: usize,
    /// Link rate in packets per second.
    pub rate: f64,
    pub flow: usize,
    pub score: f64,
}

impl HopCandidate {
    pub fn utility(&self) -> f64 {
        spectrum_utility(self.rate, self.score)
    }
}

/// Highest-utility candidate; ties go to the lower neighbor id, then the lower
/// channel. `None` when nothing has positive utility.
pub fn select_next_hop(candidates: &[HopCandidate]) -> Option<HopCandidate> {
    let mut best: Option<HopCandidate> = None;
    for c in candidates {
        let u = c.utility();
        if u <= 0.0 {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let bu = b.utility();
                u > bu || (u == bu && (c.neighbor, c.channel) < (b.neighbor, b.channel))
            }
        };
        if better {
            best = Some(*c);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn view(entries: &[((usize, NodeId), u32)]) -> BacklogView {
        entries.iter().copied().collect()
    }

    fn flows() -> Vec<FlowId> {
        vec![FlowId::unicast(1, 7).unwrap(), FlowId::unicast(2, 7).unwrap()]
    }

    #[test]
    fn flow_id_validation() {
        assert_eq!(FlowId::new(1, []), Err(BackpressureError::EmptyDestinations(1)));
        assert_eq!(FlowId::new(1, [1, 2]), Err(BackpressureError::SourceIsDestination(1)));
        let f = FlowId::new(1, [7, 6, 7]).unwrap();
        assert_eq!(f.destinations, vec![6, 7]);
        assert!(f.is_multicast());
    }

    #[test]
    fn unicast_selection_examples() {
        let f = flows();
        let qi = view(&[((0, 7), 5), ((1, 7), 4)]);
        let qj = view(&[((0, 7), 2)]);
        assert_eq!(select_flow_unicast(&f, &qi, &qj, |_| 1.0), Some((1, 4.0)));

        let qj = view(&[((0, 7), 9), ((1, 7), 4)]);
        assert_eq!(select_flow_unicast(&f, &qi, &qj, |_| 1.0), None);

        let qi = view(&[((0, 7), 5), ((1, 7), 4)]);
        let qj = view(&[((0, 7), 2), ((1, 7), 2)]);
        let alpha = |s: usize| if s == 0 { 0.5 } else { 1.0 };
        assert_eq!(select_flow_unicast(&f, &qi, &qj, alpha), Some((1, 2.0)));
    }

    #[test]
    fn multicast_score_sums_positive_parts() {
        let f = vec![FlowId::new(1, [6, 7]).unwrap()];
        let qi = view(&[((0, 6), 3), ((0, 7), 1)]);
        let qj = view(&[((0, 6), 1), ((0, 7), 2)]);
        assert_eq!(select_flow_multicast(&f, &qi, &qj, |_| 1.0), Some((0, 2.0)));
        assert_eq!(positive_destinations(0, &f[0], &qi, &qj), vec![6]);
    }

    #[test]
    fn utility_examples() {
        assert_eq!(spectrum_utility(2.0, 2.0), 4.0);
        assert_eq!(spectrum_utility(2.0, 2.0 * 0.5), 2.0);
        assert_eq!(spectrum_utility(0.0, 100.0), 0.0);
    }

    fn cand(neighbor: NodeId, channel: usize, utility: f64) -> HopCandidate {
        HopCandidate { neighbor, channel, rate: 1.0, flow: 0, score: utility }
    }

    #[test]
    fn next_hop_examples() {
        assert_eq!(select_next_hop(&[cand(2, 0, 6.0), cand(3, 0, 4.0)]).unwrap().neighbor, 2);
        assert_eq!(select_next_hop(&[cand(4, 0, 6.0), cand(2, 0, 6.0)]).unwrap().neighbor, 2);
        let tie = select_next_hop(&[cand(2, 2, 6.0), cand(2, 1, 6.0)]).unwrap();
        assert_eq!(tie.channel, 1);
        assert_eq!(select_next_hop(&[cand(2, 0, 0.0), cand(3, 1, 0.0)]), None);
    }

    #[test]
    fn penalty_examples() {
        let mut p = PenaltyTracker::new();
        assert_eq!(p.alpha(0, 3), 1.0);
        assert_eq!(p.record_visit(0, 3), 1.0);
        assert_eq!(p.record_visit(0, 3), 0.5);
        for _ in 0..8 {
            p.record_visit(0, 3);
        }
        assert!((p.alpha(0, 3) - 0.1).abs() < 1e-12);
        assert_eq!(p.alpha(1, 3), 1.0);
    }

    #[test]
    fn virtual_queues_skip_owner_and_count_exactly() {
        let mut q: VirtualQueueSet<u32> = VirtualQueueSet::new(6);
        assert!(!q.enqueue(0, 6, 1));
        assert!(q.enqueue(0, 7, 1));
        assert!(q.enqueue(0, 7, 2));
        assert_eq!(q.backlog(0, 7), 2);
        assert_eq!(q.backlog(0, 6), 0);
        assert_eq!(q.dequeue(0, 7), Some(1));
        assert_eq!(q.backlog(0, 7), 1);
        assert_eq!(q.snapshot(), view(&[((0, 7), 1)]));
        assert_eq!(q.total(), 1);
    }

    fn arb_view() -> impl Strategy<Value = BacklogView> {
        proptest::collection::btree_map((0usize..3, 5u8..8), 0u32..50, 0..9)
    }

    proptest! {
        #[test]
        fn multicast_score_matches_brute_force(qi in arb_view(), qj in arb_view(), alpha in 0.05f64..1.0) {
            let flow = FlowId::new(1, [5, 6, 7]).unwrap();
            for s in 0..3 {
                let mut brute = 0.0;
                for d in [5u8, 6, 7] {
                    let a = *qi.get(&(s, d)).unwrap_or(&0) as f64;
                    let b = *qj.get(&(s, d)).unwrap_or(&0) as f64;
                    if a > b {
                        brute += a - b;
                    }
                }
                prop_assert!((flow_score(s, &flow, &qi, &qj, alpha) - brute * alpha).abs() < 1e-9);
            }
        }

        #[test]
        fn singleton_multicast_equals_unicast(a in 0u32..40, b in 0u32..40, c in 0u32..40, d in 0u32..40) {
            let f = flows();
            let qi = view(&[((0, 7), a), ((1, 7), b)]);
            let qj = view(&[((0, 7), c), ((1, 7), d)]);
            prop_assert_eq!(
                select_flow_unicast(&f, &qi, &qj, |_| 1.0),
                select_flow_multicast(&f, &qi, &qj, |_| 1.0)
            );
        }

        #[test]
        fn argmax_is_scale_invariant(qi in arb_view(), qj in arb_view(), k in 1u32..20, rates in proptest::collection::vec(0.5f64..10.0, 3)) {
            let f = vec![FlowId::new(1, [5, 6]).unwrap(), FlowId::new(2, [7]).unwrap(), FlowId::new(3, [5, 7]).unwrap()];
            let scale = |v: &BacklogView| v.iter().map(|(key, x)| (*key, x * k)).collect::<BacklogView>();
            let (si, sj) = (scale(&qi), scale(&qj));
            let a = select_flow_multicast(&f, &qi, &qj, |_| 1.0).map(|x| x.0);
            let b = select_flow_multicast(&f, &si, &sj, |_| 1.0).map(|x| x.0);
            prop_assert_eq!(a, b);
            let hop = |qi: &BacklogView, qj: &BacklogView| {
                let cands: Vec<HopCandidate> = rates.iter().enumerate().filter_map(|(n, &rate)| {
                    select_flow_multicast(&f, qi, qj, |_| 1.0).map(|(flow, score)| HopCandidate { neighbor: n as NodeId, channel: 0, rate, flow, score })
                }).collect();
                select_next_hop(&cands).map(|c| (c.neighbor, c.flow))
            };
            prop_assert_eq!(hop(&qi, &qj), hop(&si, &sj));
        }

        #[test]
        fn next_hop_is_work_conserving(us in proptest::collection::vec(0.0f64..5.0, 1..8)) {
            let cands: Vec<_> = us.iter().enumerate().map(|(i, &u)| cand(i as NodeId, 0, u)).collect();
            let any_positive = us.iter().any(|&u| u > 0.0);
            prop_assert_eq!(select_next_hop(&cands).is_some(), any_positive);
        }
    }
}
