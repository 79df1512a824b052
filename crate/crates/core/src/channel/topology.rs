use std::collections::BTreeMap;

use rand::Rng;

use super::phy::{db_to_lin, dbm_to_mw};
use super::scenario::Scenario;
use crate::backpressure::NodeId;

/// Per (tx, rx, channel) path gains in dB. Pairs without an entry do not
/// couple at all: no signal, no interference.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: u8,
    channels: usize,
    noise_dbm: f64,
    gains: BTreeMap<(NodeId, NodeId, usize), f64>,
}

impl Topology {
    pub fn new(nodes: u8, channels: usize, noise_dbm: f64) -> Self {
        Topology { nodes, channels, noise_dbm, gains: BTreeMap::new() }
    }

    /// Gains as configured by a (validated) scenario.
    pub fn from_scenario(sc: &Scenario) -> Self {
        let mut t = Topology::new(sc.nodes, sc.channels.len(), sc.phy.noise_dbm);
        for l in &sc.links {
            let chans: Vec<usize> = match l.channel {
                Some(c) => vec![c],
                None => (0..sc.channels.len()).collect(),
            };
            for c in chans {
                t.set_gain(l.src, l.dst, c, l.gain_db);
                if l.symmetric {
                    t.set_gain(l.dst, l.src, c, l.gain_db);
                }
            }
        }
        t
    }

    pub fn set_gain(&mut self, tx: NodeId, rx: NodeId, channel: usize, gain_db: f64) {
        self.gains.insert((tx, rx, channel), gain_db);
    }

    /// Static log-normal shadowing, one draw per unordered pair and channel.
    pub fn shadowed<R: Rng + ?Sized>(&self, sigma_db: f64, rng: &mut R) -> Topology {
        if sigma_db <= 0.0 {
            return self.clone();
        }
        let mut out = self.clone();
        let mut draws: BTreeMap<(NodeId, NodeId, usize), f64> = BTreeMap::new();
        for (&(a, b, c), g) in out.gains.iter_mut() {
            let key = (a.min(b), a.max(b), c);
            let z = *draws.entry(key).or_insert_with(|| {
                // Box-Muller
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            });
            *g += sigma_db * z;
        }
        out
    }

    pub fn nodes(&self) -> u8 {
        self.nodes
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        1..=self.nodes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn noise_dbm(&self) -> f64 {
        self.noise_dbm
    }

    pub fn noise_mw(&self) -> f64 {
        dbm_to_mw(self.noise_dbm)
    }

    pub fn gain_db(&self, tx: NodeId, rx: NodeId, channel: usize) -> Option<f64> {
        self.gains.get(&(tx, rx, channel)).copied()
    }

    pub fn gain_lin(&self, tx: NodeId, rx: NodeId, channel: usize) -> f64 {
        self.gain_db(tx, rx, channel).map_or(0.0, db_to_lin)
    }

    /// Received power in mW.
    pub fn rx_power_mw(&self, tx: NodeId, rx: NodeId, channel: usize, tx_dbm: f64) -> f64 {
        dbm_to_mw(tx_dbm) * self.gain_lin(tx, rx, channel)
    }

    /// Nodes `node` can hear on any channel.
    pub fn neighbors(&self, node: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.gains.keys().filter(|k| k.1 == node).map(|k| k.0).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// SINR at `rx` for `tx` sending at `tx_dbm`, given concurrent
    /// `(sender, dBm)` transmissions on the same channel.
    pub fn link_sinr(&self, tx_dbm: f64, tx: NodeId, rx: NodeId, channel: usize, concurrent: &[(NodeId, f64)]) -> f64 {
        let signal = self.rx_power_mw(tx, rx, channel, tx_dbm);
        let interference = concurrent
            .iter()
            .filter(|(k, _)| *k != tx && *k != rx)
            .map(|&(k, p)| self.rx_power_mw(k, rx, channel, p));
        super::phy::sinr(signal, self.noise_mw(), interference)
    }

    /// Every simple path from `src` to `dst` (exhaustive; small graphs only).
    pub fn simple_paths(&self, src: NodeId, dst: NodeId) -> Vec<Vec<NodeId>> {
        let mut out = Vec::new();
        let mut path = vec![src];
        self.dfs(dst, &mut path, &mut out);
        out
    }

    fn dfs(&self, dst: NodeId, path: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
        let last = *path.last().expect("non-empty");
        if last == dst {
            out.push(path.clone());
            return;
        }
        let mut next: Vec<NodeId> = self.gains.keys().filter(|k| k.0 == last).map(|k| k.1).collect();
        next.dedup();
        for n in next {
            if !path.contains(&n) {
                path.push(n);
                self.dfs(dst, path, out);
                path.pop();
            }
        }
    }
}
