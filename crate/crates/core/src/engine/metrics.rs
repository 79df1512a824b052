use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::backpressure::NodeId;
use crate::protocol::{Micros, NodeStats};

pub const METRICS_HEADER: &str = "# bpnc-metrics v1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSample {
    pub time_us: Micros,
    pub node: NodeId,
    pub backlog: u64,
    pub energy_mj: f64,
    pub overhead: u64,
    /// Source packets this node has decoded so far.
    pub decoded: u64,
}

/// Packets decoded by every destination of a flow, cumulative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputSample {
    pub time_us: Micros,
    pub flow: usize,
    pub delivered: u64,
}

/// Mean fraction of a generation's symbols recovered after `received` packets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyPoint {
    pub received: usize,
    pub mean_fraction: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub samples: Vec<NodeSample>,
    pub throughput: Vec<ThroughputSample>,
    pub accuracy: Vec<AccuracyPoint>,
    /// Per (destination, generation): fraction recovered before full rank.
    pub early_recovery: Vec<f64>,
}

impl MetricsLog {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty() && self.throughput.is_empty()
    }

    pub fn node_series(&self, node: NodeId) -> impl Iterator<Item = &NodeSample> {
        self.samples.iter().filter(move |s| s.node == node)
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\ntime_s,node,backlog,energy_mj,overhead,decoded\n");
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{:.3},{},{},{:.6},{},{}",
                s.time_us as f64 / 1e6,
                s.node,
                s.backlog,
                s.energy_mj,
                s.overhead,
                s.decoded
            );
        }
        out
    }

    pub fn throughput_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\ntime_s,flow,delivered\n");
        for s in &self.throughput {
            let _ = writeln!(out, "{:.3},{},{}", s.time_us as f64 / 1e6, s.flow, s.delivered);
        }
        out
    }

    pub fn accuracy_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\nreceived,mean_fraction,samples\n");
        for p in &self.accuracy {
            let _ = writeln!(out, "{},{:.6},{}", p.received, p.mean_fraction, p.samples);
        }
        out
    }

    pub fn early_recovery_mean(&self) -> Option<f64> {
        if self.early_recovery.is_empty() {
            None
        } else {
            Some(self.early_recovery.iter().sum::<f64>() / self.early_recovery.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSummary {
    pub index: usize,
    pub source: NodeId,
    pub destinations: Vec<NodeId>,
    pub injected: u64,
    /// Decoded by every destination.
    pub delivered: u64,
    pub decoded_by_destination: BTreeMap<NodeId, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSummary {
    pub id: NodeId,
    pub final_backlog: u64,
    pub median_backlog: f64,
    pub max_backlog: u64,
    pub energy_mj: f64,
    pub overhead: u64,
    pub final_power_dbm: f64,
    pub stats: NodeStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkSummary {
    pub tx: NodeId,
    pub rx: NodeId,
    /// Innovative DATA frames accepted in a session.
    pub data_packets: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub block_size: usize,
    pub decoder: String,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub collision_losses: u64,
    pub decode_errors: u64,
    pub energy_total_mj: f64,
    /// Independent global meter; equals the per-node sum up to rounding.
    pub energy_meter_mj: f64,
    pub overhead_total: u64,
    /// Delivered packets per second, summed over flows.
    pub throughput_pps: f64,
    pub early_recovery_mean: Option<f64>,
    pub packet_log_sha256: String,
    pub flows: Vec<FlowSummary>,
    pub nodes: Vec<NodeSummary>,
    pub links: Vec<LinkSummary>,
}

impl Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSummary> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn link(&self, tx: NodeId, rx: NodeId) -> u64 {
        self.links.iter().find(|l| l.tx == tx && l.rx == rx).map_or(0, |l| l.data_packets)
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
