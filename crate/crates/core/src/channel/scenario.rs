//! Scenario files: topology, traffic, protocol timing, coding and radio
//! parameters, plus the four builtin topologies.

use std::path::Path;

use thiserror::Error;

use super::phy::Ofdm;
use crate::backpressure::{FlowId, NodeId};
use crate::rlnc::{DecoderMode, TagSampling};

pub const BUILTINS: [&str; 4] = ["line7", "ring7", "grid6", "butterfly7"];

/// SNR at the default transmit power on a strong link.
pub const STRONG_SNR_DB: f64 = 25.0;
/// SNR at the default transmit power on a weak link.
pub const WEAK_SNR_DB: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("unknown builtin scenario {0:?} (expected one of line7, ring7, grid6, butterfly7)")]
    UnknownBuiltin(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub label: String,
    #[serde(default)]
    pub freq_ghz: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub src: NodeId,
    pub dst: NodeId,
    /// Restrict to one channel index; all channels when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<usize>,
    pub gain_db: f64,
    #[serde(default = "yes")]
    pub symmetric: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub src: NodeId,
    pub dsts: Vec<NodeId>,
    /// Poisson arrivals, packets per second.
    pub arrival_rate: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    /// Time spent on one channel while hopping.
    pub dwell_s: f64,
    /// Channel visits per discovery phase; the phase lasts visits x dwell.
    pub discovery_visits: u32,
    /// Flow update (queue broadcast) phase length.
    pub syn_s: f64,
    /// Gap between SYN broadcasts within a flow update phase.
    pub syn_interval_s: f64,
    /// Longest wait for a CTS before falling back to flow update.
    pub tdt_s: f64,
    pub data_s: f64,
    /// How long a receiver collects competing RTS before answering.
    pub rts_window_s: f64,
    /// Discovery is repeated when this much time has passed since the last one.
    pub rediscovery_s: f64,
    /// Metrics sampling period.
    pub sample_s: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            dwell_s: 2.0,
            discovery_visits: 30,
            syn_s: 20.0,
            syn_interval_s: 2.0,
            tdt_s: 60.0,
            data_s: 30.0,
            rts_window_s: 0.1,
            rediscovery_s: 300.0,
            sample_s: 5.0,
        }
    }
}

impl Timing {
    /// Time to rendezvous: length of one discovery phase.
    pub fn ttr_s(&self) -> f64 {
        self.discovery_visits as f64 * self.dwell_s
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Coding {
    /// When off, packets are forwarded uncoded (one packet per generation).
    pub enabled: bool,
    pub block_size: usize,
    pub field_bits: u8,
    pub decoder: DecoderMode,
    pub sampling: TagSampling,
    /// Extra coded packets per received innovative packet (and per source
    /// generation), to ride out frame loss.
    pub redundancy: f64,
    /// Free-variable limit for the rank-deficient heuristic.
    pub max_free: usize,
    /// Processing time per symbol-row operation, microseconds. A coded frame
    /// costs `h * N` operations to build.
    pub coding_op_us: f64,
}

impl Default for Coding {
    fn default() -> Self {
        Coding {
            enabled: false,
            block_size: 4,
            field_bits: 4,
            decoder: DecoderMode::FullRank,
            sampling: TagSampling::LowerTriangular,
            redundancy: 0.0,
            max_free: 2,
            coding_op_us: 10.0,
        }
    }
}

impl Coding {
    /// Generation size actually used.
    pub fn effective_block_size(&self) -> usize {
        if self.enabled {
            self.block_size
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phy {
    pub noise_dbm: f64,
    /// Application payload per DATA frame.
    pub packet_bytes: usize,
    pub min_power_dbm: f64,
    pub max_power_dbm: f64,
    pub default_power_dbm: f64,
    pub power_control: bool,
    pub target_snr_db: f64,
    pub sensing: bool,
    /// Channel reads busy this far above the noise floor.
    pub busy_threshold_db: f64,
    /// Frames weaker than this SNR (no interference) are not detected.
    pub sensitivity_db: f64,
    /// Listening draws this fraction of the maximum transmit power.
    pub listen_power_factor: f64,
    /// Extra independent loss applied to DATA frames only.
    pub data_loss: f64,
    pub shadowing_sigma_db: f64,
    pub ofdm: Ofdm,
}

impl Default for Phy {
    fn default() -> Self {
        Phy {
            noise_dbm: -90.0,
            packet_bytes: 500,
            min_power_dbm: -15.0,
            max_power_dbm: -5.0,
            default_power_dbm: -10.0,
            power_control: true,
            target_snr_db: 15.0,
            sensing: true,
            busy_threshold_db: 6.0,
            sensitivity_db: 3.0,
            listen_power_factor: 0.1,
            data_loss: 0.0,
            shadowing_sigma_db: 0.0,
            ofdm: Ofdm::default(),
        }
    }
}

impl Phy {
    /// Path gain (dB) giving `snr_db` at the default transmit power.
    pub fn gain_for_snr(&self, snr_db: f64) -> f64 {
        snr_db - self.default_power_dbm + self.noise_dbm
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    /// Nodes are numbered 1..=nodes.
    pub nodes: u8,
    pub channels: Vec<ChannelSpec>,
    pub links: Vec<LinkSpec>,
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub coding: Coding,
    #[serde(default)]
    pub phy: Phy,
}

/// Parameters accepted by [`Scenario::set_param`] and the sweep command.
pub const PARAMS: [&str; 11] = [
    "block_size",
    "decoder",
    "field_bits",
    "arrival_rate",
    "data_loss",
    "redundancy",
    "sensing",
    "power_control",
    "coding_op_us",
    "duration",
    "seed",
];

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        let phy = Phy::default();
        let strong = phy.gain_for_snr(STRONG_SNR_DB);
        let weak = phy.gain_for_snr(WEAK_SNR_DB);
        let link = |src, dst, gain_db| LinkSpec { src, dst, channel: None, gain_db, symmetric: true };
        let chain = |nodes: &[NodeId], gain| -> Vec<LinkSpec> {
            nodes.windows(2).map(|w| link(w[0], w[1], gain)).collect()
        };
        let (nodes, links, flows, coding) = match name {
            "line7" => (7, chain(&[1, 2, 3, 4, 5, 6, 7], strong), vec![unicast(1, 7, 0.75)], Coding::default()),
            "ring7" => {
                let mut links = vec![link(1, 2, strong), link(1, 3, weak)];
                links.extend(chain(&[2, 6, 7], strong));
                links.extend(chain(&[3, 4, 5, 7], strong));
                (7, links, vec![unicast(1, 7, 0.6)], Coding::default())
            }
            "grid6" => {
                let mut links = chain(&[1, 2, 3], strong);
                links.extend(chain(&[4, 5, 6], strong));
                links.extend([link(1, 4, strong), link(2, 5, weak), link(3, 6, strong)]);
                (6, links, vec![unicast(1, 6, 0.6)], Coding::default())
            }
            "butterfly7" => {
                let edges = [(1, 2), (1, 3), (2, 4), (3, 4), (4, 5), (5, 6), (5, 7), (2, 6), (3, 7)];
                let links = edges.iter().map(|&(a, b)| link(a, b, strong)).collect();
                let coding = Coding { enabled: true, block_size: 4, redundancy: 0.25, ..Coding::default() };
                (7, links, vec![FlowSpec { src: 1, dsts: vec![6, 7], arrival_rate: 0.6 }], coding)
            }
            other => return Err(ScenarioError::UnknownBuiltin(other.to_string())),
        };
        let sc = Scenario {
            name: name.to_string(),
            seed: 1,
            duration_s: 600.0,
            nodes,
            channels: [2.41, 2.43, 2.46]
                .iter()
                .map(|&f| ChannelSpec { label: format!("{f:.2}GHz"), freq_ghz: f })
                .collect(),
            links,
            flows,
            timing: Timing::default(),
            coding,
            phy,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Flow identities in scenario order; their index is the flow id on the wire.
    pub fn flow_ids(&self) -> Vec<FlowId> {
        self.flows
            .iter()
            .map(|f| FlowId::new(f.src, f.dsts.iter().copied()).expect("validated"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let node_ok = |n: NodeId| n >= 1 && n <= self.nodes;
        if self.nodes == 0 {
            return Err(invalid("nodes", "must be at least 1"));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(invalid("duration_s", "must be a non-negative number of seconds"));
        }
        if self.channels.is_empty() || self.channels.len() > 255 {
            return Err(invalid("channels", "need between 1 and 255 channels"));
        }
        for (i, l) in self.links.iter().enumerate() {
            if !node_ok(l.src) || !node_ok(l.dst) {
                return Err(invalid(format!("links[{i}]"), format!("node out of range 1..={}", self.nodes)));
            }
            if l.src == l.dst {
                return Err(invalid(format!("links[{i}]"), "src and dst are the same node"));
            }
            if l.channel.is_some_and(|c| c >= self.channels.len()) {
                return Err(invalid(format!("links[{i}].channel"), "no such channel"));
            }
            if !l.gain_db.is_finite() {
                return Err(invalid(format!("links[{i}].gain_db"), "must be finite"));
            }
        }
        if self.flows.len() > 255 {
            return Err(invalid("flows", "at most 255 flows"));
        }
        for (i, f) in self.flows.iter().enumerate() {
            if !node_ok(f.src) || !f.dsts.iter().all(|&d| node_ok(d)) {
                return Err(invalid(format!("flows[{i}]"), format!("node out of range 1..={}", self.nodes)));
            }
            FlowId::new(f.src, f.dsts.iter().copied()).map_err(|e| invalid(format!("flows[{i}]"), e.to_string()))?;
            if !(f.arrival_rate.is_finite() && f.arrival_rate >= 0.0) {
                return Err(invalid(format!("flows[{i}].arrival_rate"), "must be a non-negative rate"));
            }
        }
        let t = &self.timing;
        for (name, v) in [
            ("timing.dwell_s", t.dwell_s),
            ("timing.syn_s", t.syn_s),
            ("timing.syn_interval_s", t.syn_interval_s),
            ("timing.tdt_s", t.tdt_s),
            ("timing.data_s", t.data_s),
            ("timing.rts_window_s", t.rts_window_s),
            ("timing.rediscovery_s", t.rediscovery_s),
            ("timing.sample_s", t.sample_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be a positive number of seconds"));
            }
        }
        if t.discovery_visits == 0 {
            return Err(invalid("timing.discovery_visits", "must be at least 1"));
        }
        if t.rts_window_s >= t.dwell_s {
            return Err(invalid("timing.rts_window_s", "must be shorter than the dwell time"));
        }
        let c = &self.coding;
        if !(1..=8).contains(&c.field_bits) {
            return Err(invalid("coding.field_bits", format!("{} is outside 1..=8", c.field_bits)));
        }
        if !(1..=64).contains(&c.block_size) {
            return Err(invalid("coding.block_size", format!("{} is outside 1..=64", c.block_size)));
        }
        if !(c.redundancy.is_finite() && (0.0..=4.0).contains(&c.redundancy)) {
            return Err(invalid("coding.redundancy", "must be within 0..=4"));
        }
        if !(c.coding_op_us.is_finite() && c.coding_op_us >= 0.0) {
            return Err(invalid("coding.coding_op_us", "must be non-negative"));
        }
        let p = &self.phy;
        if p.packet_bytes == 0 || p.packet_bytes > 500 {
            return Err(invalid("phy.packet_bytes", "must be within 1..=500"));
        }
        if !(p.min_power_dbm <= p.default_power_dbm && p.default_power_dbm <= p.max_power_dbm) {
            return Err(invalid("phy.default_power_dbm", "must lie within min_power_dbm..=max_power_dbm"));
        }
        if !(0.0..=1.0).contains(&p.data_loss) {
            return Err(invalid("phy.data_loss", "must be a probability"));
        }
        if !(p.listen_power_factor >= 0.0 && p.shadowing_sigma_db >= 0.0) {
            return Err(invalid("phy", "listen_power_factor and shadowing_sigma_db must be non-negative"));
        }
        let o = &p.ofdm;
        if !(o.bandwidth_hz > 0.0 && o.fft_len > 0 && o.occupied > 0 && o.occupied <= o.fft_len) {
            return Err(invalid("phy.ofdm", "need bandwidth > 0 and 0 < occupied <= fft_len"));
        }
        Ok(())
    }

    /// Set one named parameter from its text form (used by overrides and sweeps).
    pub fn set_param(&mut self, key: &str, value: &str) -> Result<(), ScenarioError> {
        let num = |v: &str| -> Result<f64, ScenarioError> {
            v.trim().parse::<f64>().map_err(|_| invalid(key, format!("{v:?} is not a number")))
        };
        let boolean = |v: &str| -> Result<bool, ScenarioError> {
            match v.trim() {
                "true" | "on" | "1" => Ok(true),
                "false" | "off" | "0" => Ok(false),
                _ => Err(invalid(key, format!("{v:?} is not a boolean"))),
            }
        };
        let int = |v: &str| -> Result<u64, ScenarioError> {
            v.trim().parse::<u64>().map_err(|_| invalid(key, format!("{v:?} is not a non-negative integer")))
        };
        match key {
            "block_size" => {
                self.coding.block_size = int(value)? as usize;
                self.coding.enabled = true;
            }
            "decoder" => self.coding.decoder = parse_decoder(value)?,
            "field_bits" => self.coding.field_bits = int(value)?.min(255) as u8,
            "arrival_rate" => {
                let r = num(value)?;
                self.flows.iter_mut().for_each(|f| f.arrival_rate = r);
            }
            "data_loss" => self.phy.data_loss = num(value)?,
            "redundancy" => self.coding.redundancy = num(value)?,
            "sensing" => self.phy.sensing = boolean(value)?,
            "power_control" => self.phy.power_control = boolean(value)?,
            "coding_op_us" => self.coding.coding_op_us = num(value)?,
            "duration" => self.duration_s = num(value)?,
            "seed" => self.seed = int(value)?,
            other => return Err(ScenarioError::UnknownParam(other.to_string())),
        }
        self.validate()
    }
}

pub fn parse_decoder(value: &str) -> Result<DecoderMode, ScenarioError> {
    match value.trim() {
        "full" | "full_rank" => Ok(DecoderMode::FullRank),
        "rankdef" | "rank_deficient" => Ok(DecoderMode::RankDeficient),
        other => Err(invalid("coding.decoder", format!("{other:?} is not one of full, rankdef"))),
    }
}

fn unicast(src: NodeId, dst: NodeId, rate: f64) -> FlowSpec {
    FlowSpec { src, dsts: vec![dst], arrival_rate: rate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Topology;

    #[test]
    fn builtins_validate_and_roundtrip_through_toml() {
        for name in BUILTINS {
            let sc = Scenario::builtin(name).unwrap();
            let back = Scenario::from_toml(&sc.to_toml()).unwrap();
            assert_eq!(sc, back, "{name}");
        }
        assert!(matches!(Scenario::builtin("mesh9"), Err(ScenarioError::UnknownBuiltin(_))));
    }

    #[test]
    fn table_one_defaults() {
        let sc = Scenario::builtin("line7").unwrap();
        assert_eq!(sc.timing.ttr_s(), 60.0);
        assert_eq!(sc.timing.tdt_s, 60.0);
        assert_eq!(sc.timing.data_s, 30.0);
        assert_eq!(sc.timing.syn_s, 20.0);
        assert_eq!(sc.channels.len(), 3);
        assert_eq!(sc.phy.packet_bytes, 500);
        assert_eq!((sc.phy.min_power_dbm, sc.phy.max_power_dbm), (-15.0, -5.0));
    }

    #[test]
    fn line_connectivity() {
        let sc = Scenario::builtin("line7").unwrap();
        let t = Topology::from_scenario(&sc);
        for i in 1..=7u8 {
            let expect: Vec<u8> = [i.wrapping_sub(1), i + 1].into_iter().filter(|&n| (1..=7).contains(&n)).collect();
            assert_eq!(t.neighbors(i), expect);
        }
        let snr = t.link_sinr(sc.phy.default_power_dbm, 1, 2, 0, &[]);
        assert!((snr - 10f64.powf(2.5)).abs() < 1e-6);
    }

    #[test]
    fn ring_has_two_disjoint_routes() {
        let sc = Scenario::builtin("ring7").unwrap();
        let t = Topology::from_scenario(&sc);
        let paths = t.simple_paths(1, 7);
        assert_eq!(paths.len(), 2);
        let inner = |p: &Vec<u8>| p[1..p.len() - 1].to_vec();
        assert!(inner(&paths[0]).iter().all(|n| !inner(&paths[1]).contains(n)));
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut sc = Scenario::builtin("butterfly7").unwrap();
        let err = sc.set_param("field_bits", "9").unwrap_err();
        assert!(err.to_string().contains("coding.field_bits"), "{err}");
        let mut sc = Scenario::builtin("line7").unwrap();
        sc.flows[0].dsts = vec![1];
        assert!(sc.validate().unwrap_err().to_string().contains("flows[0]"));
        let text = Scenario::builtin("line7").unwrap().to_toml().replace("nodes = 7", "nodes = 7\nbogus = 1");
        assert!(matches!(Scenario::from_toml(&text), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn set_param_covers_every_listed_key() {
        let samples = [
            ("block_size", "6"),
            ("decoder", "rankdef"),
            ("field_bits", "3"),
            ("arrival_rate", "0.5"),
            ("data_loss", "0.2"),
            ("redundancy", "0.5"),
            ("sensing", "off"),
            ("power_control", "false"),
            ("coding_op_us", "1"),
            ("duration", "10"),
            ("seed", "4"),
        ];
        assert_eq!(samples.len(), PARAMS.len());
        for (k, v) in samples {
            let mut sc = Scenario::builtin("butterfly7").unwrap();
            sc.set_param(k, v).unwrap();
        }
        let mut sc = Scenario::builtin("butterfly7").unwrap();
        assert!(matches!(sc.set_param("colour", "1"), Err(ScenarioError::UnknownParam(_))));
    }
}
