use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::event::{EventKind, EventQueue};
use super::metrics::{
    median, AccuracyPoint, FlowSummary, LinkSummary, MetricsLog, NodeSample, NodeSummary, Summary, ThroughputSample,
};
use super::rng::fork;
use super::EngineError;
use crate::backpressure::NodeId;
use crate::channel::{ber, db_to_lin, dbm_to_mw, frame_success, Scenario, Topology};
use crate::gf::Symbol;
use crate::protocol::wire::log_line;
use crate::protocol::{micros, Action, Ctx, Estimate, Micros, Node, Report, Shared};
use crate::rlnc::DecoderMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PacketLogMode {
    /// Keep every line in memory.
    #[default]
    Full,
    /// Only the running SHA-256 of the log.
    DigestOnly,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub packet_log: PacketLogMode,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsLog,
    pub summary: Summary,
    /// One line per transmitted frame, newline terminated.
    pub packet_log: Option<String>,
}

/// One frame on the air.
#[derive(Debug)]
struct Tx {
    src: NodeId,
    channel: usize,
    power_dbm: f64,
    start: Micros,
    end: Micros,
    bytes: Vec<u8>,
    is_data: bool,
}

struct World {
    shared: Arc<Shared>,
    topo: Topology,
    queue: EventQueue,
    txs: Vec<Tx>,
    active: Vec<usize>,
    max_airtime: Micros,
    /// Per node: (channel, tuned since).
    tuned: Vec<(usize, Micros)>,
    channel_rng: ChaCha8Rng,
    arrival_rng: Vec<ChaCha8Rng>,
    payload_rng: ChaCha8Rng,
    /// Per node: (tx energy mJ, tx time us).
    tx_energy: Vec<(f64, Micros)>,
    meter_mj: f64,
    meter_us: Micros,
    listen_mw: f64,
    log: Option<String>,
    digest: Sha256,
    frames_sent: u64,
    frames_delivered: u64,
    collision_losses: u64,
    decode_errors: u64,
    injected: Vec<u64>,
    truth: HashMap<(usize, u16, usize), Vec<Symbol>>,
    decoded_at: Vec<u64>,
    per_dest: Vec<BTreeMap<NodeId, u64>>,
    all_dest: HashMap<(usize, u16, usize), usize>,
    delivered: Vec<u64>,
    accuracy: BTreeMap<usize, (f64, u64)>,
    early: Vec<f64>,
}

impl World {
    fn node_energy(&self, i: usize, now: Micros) -> f64 {
        let (mj, us) = self.tx_energy[i];
        mj + self.listen_mw * now.saturating_sub(us) as f64 / 1e6
    }

    fn sense(&self, node: NodeId, channel: usize, now: Micros) -> f64 {
        let mut p = self.topo.noise_mw();
        for &j in &self.active {
            let t = &self.txs[j];
            if t.channel == channel && t.src != node && t.start <= now && now < t.end {
                p += self.topo.rx_power_mw(t.src, node, channel, t.power_dbm);
            }
        }
        p
    }

    fn truth_rows(&self, flow: usize, gen: u16) -> Vec<Vec<Symbol>> {
        (0..self.shared.block_size)
            .map(|i| self.truth.get(&(flow, gen, i)).cloned().unwrap_or_default())
            .collect()
    }

    fn fraction(&self, flow: usize, gen: u16, estimate: &Estimate) -> f64 {
        let h = self.shared.block_size;
        match estimate {
            Estimate::Decoded(mask) => mask.iter().filter(|&&b| b).count() as f64 / h as f64,
            Estimate::Symbols(est) => {
                let truth = self.truth_rows(flow, gen);
                est.correct_symbols(&truth) as f64 / (h * self.shared.payload_symbols) as f64
            }
        }
    }

    fn report(&mut self, node: NodeId, report: Report) {
        match report {
            Report::Decoded { flow, generation, index, payload } => {
                if self.truth.get(&(flow, generation, index)) != Some(&payload) {
                    self.decode_errors += 1;
                    return;
                }
                self.decoded_at[node as usize - 1] += 1;
                *self.per_dest[flow].entry(node).or_insert(0) += 1;
                let need = self.shared.flows[flow].destinations.len();
                let c = self.all_dest.entry((flow, generation, index)).or_insert(0);
                *c += 1;
                if *c == need {
                    self.delivered[flow] += 1;
                }
            }
            Report::Accuracy { flow, generation, received, estimate } => {
                let f = self.fraction(flow, generation, &estimate);
                let e = self.accuracy.entry(received).or_insert((0.0, 0));
                e.0 += f;
                e.1 += 1;
            }
            Report::BeforeFullRank { flow, generation, estimate } => {
                let f = self.fraction(flow, generation, &estimate);
                self.early.push(f);
            }
        }
    }

    fn apply(&mut self, node: NodeId, now: Micros, actions: Vec<Action>) {
        let i = node as usize - 1;
        for a in actions {
            match a {
                Action::Tune(ch) => self.tuned[i] = (ch, now),
                Action::SetTimer { at, timer } => self.queue.push(at.max(now), EventKind::Timer(node, timer)),
                Action::Report(r) => self.report(node, r),
                Action::Transmit { channel, power_dbm, frame, bytes } => {
                    let air = self.shared.airtime(bytes.len());
                    self.max_airtime = self.max_airtime.max(air);
                    let mj = dbm_to_mw(power_dbm) * air as f64 / 1e6;
                    self.tx_energy[i].0 += mj;
                    self.tx_energy[i].1 += air;
                    self.meter_mj += mj;
                    self.meter_us += air;
                    let mut line = log_line(now, channel, node, frame.type_name(), &bytes);
                    line.push('\n');
                    self.digest.update(line.as_bytes());
                    if let Some(log) = self.log.as_mut() {
                        log.push_str(&line);
                    }
                    self.frames_sent += 1;
                    let idx = self.txs.len();
                    self.txs.push(Tx {
                        src: node,
                        channel,
                        power_dbm,
                        start: now,
                        end: now + air,
                        bytes,
                        is_data: matches!(frame, crate::protocol::Frame::Data(_)),
                    });
                    self.active.push(idx);
                    self.queue.push(now + air, EventKind::FrameEnd(idx));
                }
            }
        }
    }
}

struct Engine {
    nodes: Vec<Node>,
    w: World,
}

impl Engine {
    fn step_node(&mut self, node: NodeId, now: Micros, f: impl FnOnce(&mut Node, &mut Ctx)) {
        let w = &self.w;
        let sense = move |ch: usize| w.sense(node, ch, now);
        let mut ctx = Ctx::new(now, &sense);
        f(&mut self.nodes[node as usize - 1], &mut ctx);
        let out = ctx.out;
        self.w.apply(node, now, out);
    }

    fn frame_end(&mut self, idx: usize, now: Micros) {
        let horizon = self.w.max_airtime;
        let txs = &self.w.txs;
        self.w.active.retain(|&j| txs[j].end + horizon >= now);
        let bytes = std::mem::take(&mut self.w.txs[idx].bytes);
        let (src, ch, dbm, start, end, is_data) = {
            let t = &self.w.txs[idx];
            (t.src, t.channel, t.power_dbm, t.start, t.end, t.is_data)
        };
        let phy = &self.w.shared.scenario.phy;
        let sens = db_to_lin(phy.sensitivity_db);
        let data_loss = if is_data { phy.data_loss } else { 0.0 };
        let modulation = phy.ofdm.modulation;
        let noise = self.w.topo.noise_mw();
        for rx in 1..=self.w.topo.nodes() {
            if rx == src || self.w.topo.gain_db(src, rx, ch).is_none() {
                continue;
            }
            let signal = self.w.topo.rx_power_mw(src, rx, ch, dbm);
            if signal / noise < sens {
                continue;
            }
            let (tch, since) = self.w.tuned[rx as usize - 1];
            if tch != ch || since > start {
                continue;
            }
            let mut interference = 0.0;
            let mut half_duplex = false;
            for &j in &self.w.active {
                let t = &self.w.txs[j];
                if j == idx || !(t.start < end && t.end > start) {
                    continue;
                }
                if t.src == rx {
                    half_duplex = true;
                    break;
                }
                if t.channel == ch && t.src != src {
                    interference += self.w.topo.rx_power_mw(t.src, rx, ch, t.power_dbm);
                }
            }
            if half_duplex {
                continue;
            }
            let sinr = signal / (noise + interference);
            let p = frame_success(ber(modulation, sinr), bytes.len()) * (1.0 - data_loss);
            let u: f64 = self.w.channel_rng.gen();
            if u < p {
                self.w.frames_delivered += 1;
                self.step_node(rx, now, |n, ctx| n.on_frame(ctx, src, signal, &bytes));
            } else if interference > 0.0 {
                self.w.collision_losses += 1;
            }
        }
    }

    fn arrival(&mut self, flow: usize, now: Micros) {
        let sh = self.w.shared.clone();
        let count = self.w.injected[flow];
        self.w.injected[flow] += 1;
        let h = sh.block_size as u64;
        let (gen, idx) = ((count / h) as u16, (count % h) as usize);
        let order = sh.field.order();
        let payload: Vec<Symbol> =
            (0..sh.payload_symbols).map(|_| self.w.payload_rng.gen_range(0..order) as Symbol).collect();
        self.w.truth.insert((flow, gen, idx), payload.clone());
        let src = sh.flows[flow].source;
        self.nodes[src as usize - 1].on_app_arrival(flow, payload);
        self.schedule_arrival(flow, now);
    }

    fn schedule_arrival(&mut self, flow: usize, now: Micros) {
        let rate = self.w.shared.scenario.flows[flow].arrival_rate;
        if rate <= 0.0 {
            return;
        }
        let u: f64 = self.w.arrival_rng[flow].gen_range(f64::MIN_POSITIVE..1.0);
        let gap = micros(-u.ln() / rate).max(1);
        self.w.queue.push(now + gap, EventKind::Arrival(flow));
    }

    fn sample(&mut self, now: Micros, metrics: &mut MetricsLog) {
        for (i, n) in self.nodes.iter().enumerate() {
            metrics.samples.push(NodeSample {
                time_us: now,
                node: n.id(),
                backlog: n.backlog(),
                energy_mj: self.w.node_energy(i, now),
                overhead: n.stats().overhead(),
                decoded: self.w.decoded_at[i],
            });
        }
        for (flow, &d) in self.w.delivered.iter().enumerate() {
            metrics.throughput.push(ThroughputSample { time_us: now, flow, delivered: d });
        }
    }
}

pub fn run(scenario: &Scenario) -> Result<RunOutput, EngineError> {
    run_with(scenario, RunOptions::default())
}

/// Simulate `scenario.duration_s` seconds from `scenario.seed`.
pub fn run_with(scenario: &Scenario, opts: RunOptions) -> Result<RunOutput, EngineError> {
    scenario.validate()?;
    let seed = scenario.seed;
    let shared = Arc::new(Shared::new(scenario.clone()));
    let topo = Topology::from_scenario(scenario).shadowed(scenario.phy.shadowing_sigma_db, &mut fork(seed, "shadowing", 0));
    let n = scenario.nodes as usize;
    let nflows = shared.flows.len();
    let end = micros(scenario.duration_s);
    let w = World {
        listen_mw: shared.power.max_mw * scenario.phy.listen_power_factor,
        shared: shared.clone(),
        topo,
        queue: EventQueue::new(),
        txs: Vec::new(),
        active: Vec::new(),
        max_airtime: 0,
        tuned: vec![(0, 0); n],
        channel_rng: fork(seed, "channel", 0),
        arrival_rng: (0..nflows).map(|f| fork(seed, "arrival", f as u64)).collect(),
        payload_rng: fork(seed, "payload", 0),
        tx_energy: vec![(0.0, 0); n],
        meter_mj: 0.0,
        meter_us: 0,
        log: (opts.packet_log == PacketLogMode::Full).then(String::new),
        digest: Sha256::new(),
        frames_sent: 0,
        frames_delivered: 0,
        collision_losses: 0,
        decode_errors: 0,
        injected: vec![0; nflows],
        truth: HashMap::new(),
        decoded_at: vec![0; n],
        per_dest: shared.flows.iter().map(|f| f.destinations.iter().map(|&d| (d, 0)).collect()).collect(),
        all_dest: HashMap::new(),
        delivered: vec![0; nflows],
        accuracy: BTreeMap::new(),
        early: Vec::new(),
    };
    let nodes = (1..=scenario.nodes).map(|id| Node::new(id, shared.clone(), fork(seed, "node", id as u64))).collect();
    let mut eng = Engine { nodes, w };
    let mut metrics = MetricsLog::default();

    if end > 0 {
        for id in 1..=scenario.nodes {
            eng.step_node(id, 0, |n, ctx| n.start(ctx));
        }
        for f in 0..nflows {
            eng.schedule_arrival(f, 0);
        }
        let step = micros(scenario.timing.sample_s);
        let mut t = step;
        while t < end {
            eng.w.queue.push(t, EventKind::Sample);
            t += step;
        }
        eng.w.queue.push(end, EventKind::Sample);

        while let Some(ev) = eng.w.queue.pop() {
            if ev.time > end {
                break;
            }
            let now = ev.time;
            match ev.kind {
                EventKind::Timer(node, timer) => eng.step_node(node, now, |n, ctx| n.on_timer(ctx, timer)),
                EventKind::FrameEnd(idx) => eng.frame_end(idx, now),
                EventKind::Arrival(flow) => eng.arrival(flow, now),
                EventKind::Sample => eng.sample(now, &mut metrics),
            }
        }
    }

    let w = &mut eng.w;
    metrics.accuracy = w
        .accuracy
        .iter()
        .map(|(&received, &(sum, n))| AccuracyPoint { received, mean_fraction: sum / n as f64, samples: n })
        .collect();
    metrics.early_recovery = std::mem::take(&mut w.early);

    let summary = summarize(&eng, &metrics, end);
    let packet_log = eng.w.log.take();
    Ok(RunOutput { metrics, summary, packet_log })
}

fn summarize(eng: &Engine, metrics: &MetricsLog, end: Micros) -> Summary {
    let w = &eng.w;
    let sc = &w.shared.scenario;
    let nodes: Vec<NodeSummary> = eng
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mut series: Vec<f64> = metrics.node_series(n.id()).map(|s| s.backlog as f64).collect();
            let max_backlog = series.iter().fold(0.0f64, |a, &b| a.max(b)) as u64;
            NodeSummary {
                id: n.id(),
                final_backlog: n.backlog(),
                median_backlog: median(&mut series),
                max_backlog,
                energy_mj: w.node_energy(i, end),
                overhead: n.stats().overhead(),
                final_power_dbm: n.power_dbm(),
                stats: n.stats().clone(),
            }
        })
        .collect();
    let links = eng
        .nodes
        .iter()
        .flat_map(|n| {
            n.stats().data_from.iter().map(move |(&tx, &c)| LinkSummary { tx, rx: n.id(), data_packets: c })
        })
        .collect();
    let flows: Vec<FlowSummary> = w
        .shared
        .flows
        .iter()
        .enumerate()
        .map(|(i, f)| FlowSummary {
            index: i,
            source: f.source,
            destinations: f.destinations.clone(),
            injected: w.injected[i],
            delivered: w.delivered[i],
            decoded_by_destination: w.per_dest[i].clone(),
        })
        .collect();
    let secs = end as f64 / 1e6;
    let delivered: u64 = w.delivered.iter().sum();
    let n = eng.nodes.len() as u64;
    Summary {
        scenario: sc.name.clone(),
        seed: sc.seed,
        duration_s: sc.duration_s,
        block_size: w.shared.block_size,
        decoder: match sc.coding.decoder {
            DecoderMode::FullRank => "full".into(),
            DecoderMode::RankDeficient => "rankdef".into(),
        },
        frames_sent: w.frames_sent,
        frames_delivered: w.frames_delivered,
        collision_losses: w.collision_losses,
        decode_errors: w.decode_errors,
        energy_total_mj: nodes.iter().map(|s| s.energy_mj).sum(),
        energy_meter_mj: w.meter_mj + w.listen_mw * (n * end).saturating_sub(w.meter_us) as f64 / 1e6,
        overhead_total: nodes.iter().map(|s| s.overhead).sum(),
        throughput_pps: if secs > 0.0 { delivered as f64 / secs } else { 0.0 },
        early_recovery_mean: metrics.early_recovery_mean(),
        packet_log_sha256: w.digest.clone().finalize().iter().map(|b| format!("{b:02x}")).collect(),
        flows,
        nodes,
        links,
    }
}
