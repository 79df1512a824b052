//! Per-node protocol state machine.
//!
//! A node is driven by timers, received frames and application arrivals, and
//! answers with [`Action`]s (tune, transmit, set a timer, report). It never
//! touches the medium or other nodes directly.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::power::{update_power, PowerRange};
use super::wire::{to_q16_16, Cts, Dis, DisNeighbor, Frame, Rts, Syn, SynEntry};
use super::{conflict, Resolution};
use crate::backpressure::{
    positive_destinations, select_flow_multicast, select_next_hop, Backlog, BacklogView, FlowId, HopCandidate,
    NodeId, PenaltyTracker, VirtualQueueSet,
};
use crate::channel::{db_to_lin, dbm_to_mw, lin_to_db, link_rate, mw_to_dbm, Scenario};
use crate::gf::{Field, Symbol};
use crate::rlnc::{
    rank_deficient_solve, recode, recode_prefix, CodedPacket, Decoder, DecoderMode, MinWeightSearch,
    RankDeficientEstimate, TagSampling,
};

pub type Micros = u64;

pub fn micros(seconds: f64) -> Micros {
    (seconds * 1e6).round() as Micros
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Phase {
    Discovery,
    FlowUpdate,
    Negotiation,
    DataTransfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerKind {
    PhaseEnd,
    Hop,
    Control,
    RtsWindow,
    DataNext,
}

/// A timer is stale once the node has moved to a new phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timer {
    pub kind: TimerKind,
    pub epoch: u64,
}

/// What a destination knows about one generation at some instant.
#[derive(Debug, Clone)]
pub enum Estimate {
    /// Decoded source packets only.
    Decoded(Vec<bool>),
    /// Per-symbol estimates including heuristic guesses.
    Symbols(RankDeficientEstimate),
}

#[derive(Debug, Clone)]
pub enum Report {
    Decoded { flow: usize, generation: u16, index: usize, payload: Vec<Symbol> },
    /// State after the `received`-th packet of a generation arrived.
    Accuracy { flow: usize, generation: u16, received: usize, estimate: Estimate },
    /// State just before the packet that completes the rank.
    BeforeFullRank { flow: usize, generation: u16, estimate: Estimate },
}

#[derive(Debug, Clone)]
pub enum Action {
    Tune(usize),
    Transmit { channel: usize, power_dbm: f64, frame: Frame, bytes: Vec<u8> },
    SetTimer { at: Micros, timer: Timer },
    Report(Report),
}

/// Per-event context: current time, a carrier-sense probe, and the action sink.
pub struct Ctx<'a> {
    pub now: Micros,
    /// Received power (mW, noise included) on a channel at this node.
    pub sense: &'a dyn Fn(usize) -> f64,
    pub out: Vec<Action>,
}

impl<'a> Ctx<'a> {
    pub fn new(now: Micros, sense: &'a dyn Fn(usize) -> f64) -> Self {
        Ctx { now, sense, out: Vec::new() }
    }
}

/// Uniformly random channel other than `current` (or the only one).
pub fn hop_next_channel<R: Rng + ?Sized>(current: usize, channels: usize, rng: &mut R) -> usize {
    if channels <= 1 {
        return 0;
    }
    let k = rng.gen_range(0..channels - 1);
    if k >= current {
        k + 1
    } else {
        k
    }
}

#[derive(Debug, Clone, Default)]
pub struct NeighborRecord {
    pub id: NodeId,
    /// Linear SNR per channel when the neighbor sends at maximum power.
    pub snr: BTreeMap<usize, f64>,
    pub next_channel: Option<usize>,
    pub last_heard: Micros,
    pub backlogs: BacklogView,
    pub syn_at: Option<Micros>,
}

/// Read-only configuration shared by every node of a run.
#[derive(Debug)]
pub struct Shared {
    pub scenario: Scenario,
    pub flows: Vec<FlowId>,
    pub field: Arc<Field>,
    pub block_size: usize,
    pub payload_symbols: usize,
    pub data_frame_bytes: usize,
    pub power: PowerRange,
    pub noise_mw: f64,
    pub busy_mw: f64,
    dwell: Micros,
    ttr: Micros,
    syn: Micros,
    syn_interval: Micros,
    tdt: Micros,
    data: Micros,
    window: Micros,
    rediscovery: Micros,
    staleness: Micros,
}

impl Shared {
    pub fn new(scenario: Scenario) -> Self {
        let field = Arc::new(Field::new(scenario.coding.field_bits).expect("validated field width"));
        let block_size = scenario.coding.effective_block_size();
        let payload_symbols = field.symbols_for_bytes(scenario.phy.packet_bytes);
        let data_frame_bytes = 5
            + block_size
            + (block_size * field.bits() as usize).div_ceil(8)
            + (payload_symbols * field.bits() as usize).div_ceil(8);
        let t = &scenario.timing;
        let p = &scenario.phy;
        Shared {
            flows: scenario.flow_ids(),
            field,
            block_size,
            payload_symbols,
            data_frame_bytes,
            power: PowerRange::from_dbm(p.min_power_dbm, p.max_power_dbm),
            noise_mw: dbm_to_mw(p.noise_dbm),
            busy_mw: dbm_to_mw(p.noise_dbm + p.busy_threshold_db),
            dwell: micros(t.dwell_s),
            ttr: micros(t.ttr_s()),
            syn: micros(t.syn_s),
            syn_interval: micros(t.syn_interval_s),
            tdt: micros(t.tdt_s),
            data: micros(t.data_s),
            window: micros(t.rts_window_s),
            rediscovery: micros(t.rediscovery_s),
            staleness: 3 * micros(t.ttr_s()),
            scenario,
        }
    }

    pub fn airtime(&self, bytes: usize) -> Micros {
        self.scenario.phy.ofdm.airtime_us(bytes)
    }

    /// Processing time to build one coded DATA frame.
    pub fn coding_delay(&self) -> Micros {
        if !self.scenario.coding.enabled {
            return 0;
        }
        (self.block_size as f64 * self.payload_symbols as f64 * self.scenario.coding.coding_op_us).round() as Micros
    }

    /// SNR a data frame will see on a link whose full-power SNR is `snr_max`.
    pub fn data_snr(&self, snr_max: f64) -> f64 {
        let p = &self.scenario.phy;
        let tx = if p.power_control {
            self.power.clamp(self.power.max_mw * db_to_lin(p.target_snr_db) / snr_max)
        } else {
            dbm_to_mw(p.default_power_dbm)
        };
        snr_max * tx / self.power.max_mw
    }
}

/// One queued transmission opportunity for a (flow, destination) backlog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Credit {
    pub generation: u16,
    /// Number of buffered rows the coded packet may combine.
    pub support: usize,
}

#[derive(Debug, Clone)]
struct GenBuf {
    rows: Vec<CodedPacket>,
    decoder: Decoder,
    received: usize,
}

#[derive(Debug, Clone, Default)]
struct FlowState {
    gens: BTreeMap<u16, GenBuf>,
    /// Source side: packets generated so far.
    produced: u64,
    /// Source side: fractional repair packets owed.
    repair_acc: f64,
    /// Relay side: fractional extra credits owed, per destination.
    relay_acc: BTreeMap<NodeId, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    peer: NodeId,
    channel: usize,
    flow: usize,
    utility_q: u32,
}

#[derive(Debug, Clone, PartialEq)]
enum Session {
    /// `dests`: destinations whose differential was positive when scheduled.
    Sending { peer: NodeId, flow: usize, channel: usize, dests: Vec<NodeId>, end: Micros },
    /// `served`: destinations where the peer's last advertised backlog exceeded ours.
    Receiving { peer: NodeId, flow: usize, channel: usize, served: Vec<NodeId> },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct NodeStats {
    pub dis_sent: u64,
    pub syn_sent: u64,
    pub rts_sent: u64,
    pub cts_sent: u64,
    pub data_sent: u64,
    pub data_received: u64,
    pub sessions_sent: u64,
    pub sessions_received: u64,
    pub late_cts: u64,
    pub backoffs: u64,
    pub malformed: u64,
    /// DATA frames accepted inside a receiving session, by sender.
    pub data_from: BTreeMap<NodeId, u64>,
}

impl NodeStats {
    /// Control frames sent: DIS + SYN + RTS + CTS.
    pub fn overhead(&self) -> u64 {
        self.dis_sent + self.syn_sent + self.rts_sent + self.cts_sent
    }
}

pub struct Node {
    id: NodeId,
    shared: Arc<Shared>,
    rng: ChaCha8Rng,
    phase: Phase,
    epoch: u64,
    phase_end: Micros,
    phase_log: Vec<(Micros, Phase)>,
    channel: usize,
    next_channel: usize,
    hold_until: Micros,
    busy_until: Micros,
    neighbors: BTreeMap<NodeId, NeighborRecord>,
    credits: VirtualQueueSet<Credit>,
    penalty: PenaltyTracker,
    flows: Vec<FlowState>,
    power_mw: f64,
    pending: Option<Pending>,
    last_pending: Option<Pending>,
    session: Option<Session>,
    heard_rts: Vec<(Micros, Rts)>,
    window_open: bool,
    /// Per channel: reserved by an overheard CTS until this time.
    nav: BTreeMap<usize, Micros>,
    last_discovery: Micros,
    stats: NodeStats,
}

impl Node {
    pub fn new(id: NodeId, shared: Arc<Shared>, mut rng: ChaCha8Rng) -> Self {
        let channels = shared.scenario.channels.len();
        let channel = rng.gen_range(0..channels);
        let next_channel = hop_next_channel(channel, channels, &mut rng);
        let nflows = shared.flows.len();
        Node {
            id,
            power_mw: dbm_to_mw(shared.scenario.phy.default_power_dbm),
            shared,
            rng,
            phase: Phase::Discovery,
            epoch: 0,
            phase_end: 0,
            phase_log: Vec::new(),
            channel,
            next_channel,
            hold_until: 0,
            busy_until: 0,
            neighbors: BTreeMap::new(),
            credits: VirtualQueueSet::new(id),
            penalty: PenaltyTracker::new(),
            flows: vec![FlowState::default(); nflows],
            pending: None,
            last_pending: None,
            session: None,
            heard_rts: Vec::new(),
            window_open: false,
            nav: BTreeMap::new(),
            last_discovery: 0,
            stats: NodeStats::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn phase_log(&self) -> &[(Micros, Phase)] {
        &self.phase_log
    }

    pub fn channel(&self) -> usize {
        self.channel
    }

    /// Transmitter of the session this node is currently receiving.
    pub fn receiving_from(&self) -> Option<NodeId> {
        match self.session {
            Some(Session::Receiving { peer, .. }) => Some(peer),
            _ => None,
        }
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn power_dbm(&self) -> f64 {
        mw_to_dbm(self.power_mw)
    }

    pub fn neighbors(&self) -> &BTreeMap<NodeId, NeighborRecord> {
        &self.neighbors
    }

    pub fn credits(&self) -> &VirtualQueueSet<Credit> {
        &self.credits
    }

    pub fn penalty(&self) -> &PenaltyTracker {
        &self.penalty
    }

    /// Sum of all virtual backlogs.
    pub fn backlog(&self) -> u64 {
        self.credits.total()
    }

    fn timer(&self, ctx: &mut Ctx, at: Micros, kind: TimerKind) {
        ctx.out.push(Action::SetTimer { at, timer: Timer { kind, epoch: self.epoch } });
    }

    fn tune(&mut self, ctx: &mut Ctx, channel: usize) {
        if channel != self.channel {
            self.channel = channel;
            ctx.out.push(Action::Tune(channel));
        }
    }

    fn enter(&mut self, ctx: &mut Ctx, phase: Phase, length: Micros) {
        self.epoch += 1;
        self.phase = phase;
        self.phase_end = ctx.now + length;
        self.phase_log.push((ctx.now, phase));
        self.hold_until = 0;
        self.window_open = false;
        self.timer(ctx, self.phase_end, TimerKind::PhaseEnd);
    }

    fn jitter(&mut self, span: Micros) -> Micros {
        if span == 0 {
            0
        } else {
            self.rng.gen_range(0..span)
        }
    }

    fn hop(&mut self, ctx: &mut Ctx) {
        let channels = self.shared.scenario.channels.len();
        let ch = self.next_channel;
        self.next_channel = hop_next_channel(ch, channels, &mut self.rng);
        self.tune(ctx, ch);
    }

    /// Kick off the run: every node starts in discovery.
    pub fn start(&mut self, ctx: &mut Ctx) {
        ctx.out.push(Action::Tune(self.channel));
        self.enter_discovery(ctx);
    }

    fn enter_discovery(&mut self, ctx: &mut Ctx) {
        self.enter(ctx, Phase::Discovery, self.shared.ttr);
        self.last_discovery = ctx.now;
        self.start_dwell(ctx);
    }

    fn start_dwell(&mut self, ctx: &mut Ctx) {
        self.hop(ctx);
        let dwell = self.shared.dwell;
        if ctx.now + dwell < self.phase_end {
            self.timer(ctx, ctx.now + dwell, TimerKind::Hop);
        }
        if self.phase == Phase::Discovery {
            let at = ctx.now + self.jitter(dwell / 2);
            self.timer(ctx, at, TimerKind::Control);
        }
    }

    fn enter_flow_update(&mut self, ctx: &mut Ctx) {
        if ctx.now.saturating_sub(self.last_discovery) >= self.shared.rediscovery {
            self.enter_discovery(ctx);
            return;
        }
        self.enter(ctx, Phase::FlowUpdate, self.shared.syn);
        self.start_dwell(ctx);
        let at = ctx.now + self.jitter(self.shared.syn_interval);
        self.timer(ctx, at, TimerKind::Control);
    }

    fn enter_negotiation(&mut self, ctx: &mut Ctx, hop: HopCandidate) {
        let snr_max = self.neighbors[&hop.neighbor].snr[&hop.channel];
        let phy = &self.shared.scenario.phy;
        self.power_mw = if phy.power_control {
            let achieved = snr_max * self.power_mw / self.shared.power.max_mw;
            update_power(self.power_mw, db_to_lin(phy.target_snr_db), achieved, self.shared.power)
        } else {
            dbm_to_mw(phy.default_power_dbm)
        };
        self.pending = Some(Pending {
            peer: hop.neighbor,
            channel: hop.channel,
            flow: hop.flow,
            utility_q: to_q16_16(hop.utility()),
        });
        self.enter(ctx, Phase::Negotiation, self.shared.tdt);
        self.tune(ctx, hop.channel);
        let at = ctx.now + self.jitter(self.shared.dwell / 4);
        self.timer(ctx, at, TimerKind::Control);
    }

    fn reserved(&self, channel: usize, now: Micros) -> bool {
        self.nav.get(&channel).is_some_and(|&t| t > now)
    }

    fn fresh(&self, rec: &NeighborRecord, now: Micros) -> bool {
        now.saturating_sub(rec.last_heard) <= self.shared.staleness
    }

    /// Every (neighbor, channel) option with its best flow, from the local
    /// topology database and the last reported neighbor backlogs.
    pub fn schedule_candidates(&self, now: Micros) -> Vec<HopCandidate> {
        let sh = &self.shared;
        let mut cands = Vec::new();
        for rec in self.neighbors.values().filter(|r| self.fresh(r, now)) {
            let Some((flow, score)) =
                select_flow_multicast(&sh.flows, &self.credits, &rec.backlogs, |s| self.penalty.alpha(s, rec.id))
            else {
                continue;
            };
            for (&channel, &snr_max) in rec.snr.iter().filter(|(&c, _)| !self.reserved(c, now)) {
                let rate = link_rate(&sh.scenario.phy.ofdm, sh.data_snr(snr_max), sh.data_frame_bytes).packets_per_s;
                cands.push(HopCandidate { neighbor: rec.id, channel, rate, flow, score });
            }
        }
        cands
    }

    /// Highest spectrum utility; exact ties are broken uniformly at random.
    pub fn compute_schedule(&mut self, now: Micros) -> Option<HopCandidate> {
        let cands = self.schedule_candidates(now);
        let best = select_next_hop(&cands)?;
        let tied: Vec<&HopCandidate> = cands.iter().filter(|c| c.utility() == best.utility()).collect();
        Some(*tied[self.rng.gen_range(0..tied.len())])
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx, timer: Timer) {
        if timer.epoch != self.epoch {
            return;
        }
        match timer.kind {
            TimerKind::PhaseEnd => self.on_phase_end(ctx),
            TimerKind::Hop => {
                if self.hold_until > ctx.now {
                    let at = self.hold_until;
                    self.timer(ctx, at, TimerKind::Hop);
                } else {
                    self.start_dwell(ctx);
                }
            }
            TimerKind::Control => self.on_control(ctx),
            TimerKind::RtsWindow => self.on_window_close(ctx),
            TimerKind::DataNext => self.on_data_next(ctx),
        }
    }

    fn on_phase_end(&mut self, ctx: &mut Ctx) {
        match self.phase {
            Phase::Discovery => self.enter_flow_update(ctx),
            Phase::FlowUpdate => match self.compute_schedule(ctx.now) {
                Some(hop) => self.enter_negotiation(ctx, hop),
                None => self.enter_flow_update(ctx),
            },
            Phase::Negotiation => {
                self.last_pending = self.pending.take();
                self.enter_flow_update(ctx);
            }
            Phase::DataTransfer => {
                self.session = None;
                self.enter_flow_update(ctx);
            }
        }
    }

    fn channel_busy(&self, ctx: &Ctx) -> bool {
        self.shared.scenario.phy.sensing && (ctx.sense)(self.channel) > self.shared.busy_mw
    }

    fn send(&mut self, ctx: &mut Ctx, frame: Frame, power_mw: f64) {
        let bytes = frame.encode(&self.shared.field);
        self.busy_until = ctx.now + self.shared.airtime(bytes.len());
        match &frame {
            Frame::Dis(_) => self.stats.dis_sent += 1,
            Frame::Syn(_) => self.stats.syn_sent += 1,
            Frame::Rts(_) => self.stats.rts_sent += 1,
            Frame::Cts(_) => self.stats.cts_sent += 1,
            Frame::Data(_) => self.stats.data_sent += 1,
        }
        ctx.out.push(Action::Transmit { channel: self.channel, power_dbm: mw_to_dbm(power_mw), frame, bytes });
    }

    fn on_control(&mut self, ctx: &mut Ctx) {
        if ctx.now < self.busy_until {
            let at = self.busy_until;
            self.timer(ctx, at, TimerKind::Control);
            return;
        }
        if self.phase == Phase::DataTransfer {
            return;
        }
        if self.channel_busy(ctx) {
            self.stats.backoffs += 1;
            if self.phase != Phase::Negotiation && self.hold_until <= ctx.now {
                self.hop(ctx);
            }
            let at = ctx.now + 1 + self.jitter(micros(0.05));
            self.timer(ctx, at, TimerKind::Control);
            return;
        }
        let max = self.shared.power.max_mw;
        match self.phase {
            Phase::Discovery => {
                let frame = Frame::Dis(self.make_dis(ctx.now));
                self.send(ctx, frame, max);
            }
            Phase::FlowUpdate => {
                let frame = Frame::Syn(self.make_syn());
                self.send(ctx, frame, max);
                let iv = self.shared.syn_interval;
                let at = ctx.now + iv / 2 + self.jitter(iv);
                self.timer(ctx, at, TimerKind::Control);
            }
            Phase::Negotiation => {
                if let Some(p) = self.pending {
                    if self.reserved(p.channel, ctx.now) {
                        let at = ctx.now + self.shared.dwell;
                        self.timer(ctx, at, TimerKind::Control);
                        return;
                    }
                    let rts = Rts {
                        tx: self.id,
                        rx: p.peer,
                        channel: p.channel as u8,
                        flow: p.flow as u8,
                        utility_q: p.utility_q,
                    };
                    self.send(ctx, Frame::Rts(rts), max);
                    let at = ctx.now + self.shared.dwell;
                    self.timer(ctx, at, TimerKind::Control);
                }
            }
            Phase::DataTransfer => {}
        }
    }

    pub fn make_dis(&self, now: Micros) -> Dis {
        let neighbors = self
            .neighbors
            .values()
            .filter(|r| self.fresh(r, now))
            .filter_map(|r| {
                let (&ch, &snr) = r.snr.iter().max_by(|a, b| a.1.total_cmp(b.1))?;
                Some(DisNeighbor { id: r.id, channel: ch as u8, snr_db: lin_to_db(snr) })
            })
            .take(255)
            .collect();
        Dis { sender: self.id, next_channel: self.next_channel as u8, neighbors }
    }

    pub fn make_syn(&self) -> Syn {
        let entries = self
            .credits
            .snapshot()
            .into_iter()
            .take(255)
            .map(|((f, d), n)| {
                let flow = &self.shared.flows[f];
                let mut destinations = vec![d];
                destinations.extend(flow.destinations.iter().copied().filter(|&x| x != d));
                SynEntry { source: flow.source, destinations, backlog: n.min(u16::MAX as u32) as u16 }
            })
            .collect();
        Syn { sender: self.id, entries }
    }

    fn flow_index(&self, source: NodeId, destinations: &[NodeId]) -> Option<usize> {
        let mut set = destinations.to_vec();
        set.sort_unstable();
        self.shared.flows.iter().position(|f| f.source == source && f.destinations == set)
    }

    /// A frame from `src` arrived intact on the current channel.
    pub fn on_frame(&mut self, ctx: &mut Ctx, src: NodeId, rx_power_mw: f64, bytes: &[u8]) {
        let frame = match Frame::decode(bytes, &self.shared.field, self.shared.payload_symbols) {
            Ok(f) => f,
            Err(_) => {
                self.stats.malformed += 1;
                return;
            }
        };
        let now = ctx.now;
        let channel = self.channel;
        let noise = self.shared.noise_mw;
        let rec = self.neighbors.entry(src).or_insert_with(|| NeighborRecord { id: src, ..Default::default() });
        rec.last_heard = now;
        if frame.is_control() {
            // control frames go out at full power
            rec.snr.insert(channel, rx_power_mw / noise);
        }
        match frame {
            Frame::Dis(d) => rec.next_channel = Some(d.next_channel as usize),
            Frame::Syn(s) => {
                let view: BacklogView = s
                    .entries
                    .iter()
                    .filter_map(|e| {
                        let f = self.flow_index(e.source, &e.destinations)?;
                        Some(((f, *e.destinations.first()?), e.backlog as u32))
                    })
                    .collect();
                let rec = self.neighbors.get_mut(&src).expect("inserted above");
                rec.backlogs = view;
                rec.syn_at = Some(now);
            }
            Frame::Rts(r) => self.on_rts(ctx, r),
            Frame::Cts(c) => self.on_cts(ctx, c),
            Frame::Data(p) => self.on_data(ctx, src, p),
        }
    }

    fn on_rts(&mut self, ctx: &mut Ctx, r: Rts) {
        let horizon = 2 * self.shared.window;
        self.heard_rts.retain(|(t, _)| ctx.now.saturating_sub(*t) <= horizon);
        self.heard_rts.push((ctx.now, r));
        if self.phase != Phase::DataTransfer && r.rx == self.id && !self.window_open {
            self.window_open = true;
            self.hold_until = ctx.now + self.shared.window;
            let at = self.hold_until;
            self.timer(ctx, at, TimerKind::RtsWindow);
        }
    }

    fn on_window_close(&mut self, ctx: &mut Ctx) {
        if !self.window_open {
            return;
        }
        self.window_open = false;
        self.hold_until = 0;
        let horizon = 2 * self.shared.window;
        let ch = self.channel as u8;
        let heard: Vec<Rts> = self
            .heard_rts
            .iter()
            .filter(|(t, r)| ctx.now.saturating_sub(*t) <= horizon && r.channel == ch)
            .map(|(_, r)| *r)
            .collect();
        let own = match (self.phase, self.pending) {
            (Phase::Negotiation, Some(p)) if p.channel == self.channel => Some(Rts {
                tx: self.id,
                rx: p.peer,
                channel: ch,
                flow: p.flow as u8,
                utility_q: p.utility_q,
            }),
            _ => None,
        };
        if let Resolution::SendCts { to, flow } = conflict::resolve(self.id, own.as_ref(), &heard) {
            if ctx.now < self.busy_until
                || flow as usize >= self.shared.flows.len()
                || self.reserved(self.channel, ctx.now)
            {
                return;
            }
            let cts = Cts { rx: self.id, tx: to, channel: ch };
            self.send(ctx, Frame::Cts(cts), self.shared.power.max_mw);
            self.pending = None;
            self.last_pending = None;
            self.stats.sessions_received += 1;
            // the flow has now been through `to`
            self.penalty.record_visit(flow as usize, to);
            let f = flow as usize;
            let all = &self.shared.flows[f].destinations;
            let mut served = match self.neighbors.get(&to).filter(|r| r.syn_at.is_some()) {
                Some(r) => positive_destinations(f, &self.shared.flows[f], &r.backlogs, &self.credits),
                None => all.clone(),
            };
            served.retain(|&d| d != self.id);
            if served.is_empty() {
                // our view of the peer is older than its RTS
                served = all.iter().copied().filter(|&d| d != self.id).collect();
            }
            self.session = Some(Session::Receiving { peer: to, flow: f, channel: self.channel, served });
            let extra = self.shared.airtime(4);
            self.enter(ctx, Phase::DataTransfer, self.shared.data + extra);
        }
    }

    fn on_cts(&mut self, ctx: &mut Ctx, c: Cts) {
        if c.tx != self.id {
            // someone nearby is about to receive here
            let until = ctx.now + self.shared.data;
            let e = self.nav.entry(c.channel as usize).or_insert(0);
            *e = (*e).max(until);
            return;
        }
        let matches = |p: &Option<Pending>| p.is_some_and(|p| p.peer == c.rx && p.channel == c.channel as usize);
        let granted = match self.phase {
            Phase::Negotiation if matches(&self.pending) => self.pending.take(),
            Phase::FlowUpdate if matches(&self.last_pending) => {
                self.stats.late_cts += 1;
                self.last_pending.take()
            }
            _ => None,
        };
        let Some(p) = granted else { return };
        self.penalty.record_visit(p.flow, p.peer);
        let view = self.neighbors.get(&p.peer).map(|r| r.backlogs.clone()).unwrap_or_default();
        let dests = positive_destinations(p.flow, &self.shared.flows[p.flow], &self.credits, &view);
        self.stats.sessions_sent += 1;
        self.enter(ctx, Phase::DataTransfer, self.shared.data);
        self.tune(ctx, p.channel);
        self.session =
            Some(Session::Sending { peer: p.peer, flow: p.flow, channel: p.channel, dests, end: self.phase_end });
        self.timer(ctx, ctx.now, TimerKind::DataNext);
    }

    fn on_data_next(&mut self, ctx: &mut Ctx) {
        let Some(Session::Sending { flow, end, .. }) = self.session.as_ref() else { return };
        let (flow, end) = (*flow, *end);
        let airtime = self.shared.airtime(self.shared.data_frame_bytes);
        if ctx.now + airtime > end {
            return;
        }
        if ctx.now < self.busy_until {
            let at = self.busy_until;
            self.timer(ctx, at, TimerKind::DataNext);
            return;
        }
        let Some(Session::Sending { dests, .. }) = self.session.as_ref() else { return };
        let dsel: Vec<NodeId> = dests.iter().copied().filter(|&d| self.credits.backlog(flow, d) > 0).collect();
        if dsel.is_empty() {
            self.timer(ctx, ctx.now + airtime, TimerKind::DataNext);
            return;
        }
        if self.channel_busy(ctx) {
            self.stats.backoffs += 1;
            let at = ctx.now + 1 + self.jitter(airtime);
            self.timer(ctx, at, TimerKind::DataNext);
            return;
        }
        let gen = dsel
            .iter()
            .filter_map(|&d| self.credits.front(flow, d).map(|c| c.generation))
            .min()
            .expect("positive backlog has a front");
        let mut support = 0;
        for &d in &dsel {
            if self.credits.front(flow, d).is_some_and(|c| c.generation == gen) {
                let c = self.credits.dequeue(flow, d).expect("front exists");
                support = support.max(c.support);
            }
        }
        let Some(pkt) = self.build_packet(flow, gen, support) else {
            self.timer(ctx, ctx.now, TimerKind::DataNext);
            return;
        };
        self.send(ctx, Frame::Data(pkt), self.power_mw);
        let at = ctx.now + airtime + self.shared.coding_delay();
        self.timer(ctx, at, TimerKind::DataNext);
    }

    fn build_packet(&mut self, flow: usize, gen: u16, support: usize) -> Option<CodedPacket> {
        let sh = self.shared.clone();
        let rows = &self.flows[flow].gens.get(&gen)?.rows;
        if rows.is_empty() {
            return None;
        }
        if !sh.scenario.coding.enabled {
            return Some(rows[0].clone());
        }
        let out = match sh.scenario.coding.sampling {
            TagSampling::LowerTriangular => recode_prefix(&sh.field, rows, support, &mut self.rng),
            TagSampling::Uniform | TagSampling::RankIncreasing => recode(&sh.field, rows, &mut self.rng),
        };
        out.ok()
    }

    fn new_genbuf(&self, generation: u16) -> GenBuf {
        let sh = &self.shared;
        GenBuf {
            rows: Vec::new(),
            decoder: Decoder::new(
                sh.field.clone(),
                sh.scenario.coding.decoder,
                generation,
                sh.block_size,
                sh.payload_symbols,
            ),
            received: 0,
        }
    }

    /// A new application packet at this flow's source.
    pub fn on_app_arrival(&mut self, flow: usize, payload: Vec<Symbol>) {
        let sh = self.shared.clone();
        let h = sh.block_size;
        let fs = &mut self.flows[flow];
        let gen = (fs.produced / h as u64) as u16;
        let index = (fs.produced % h as u64) as usize;
        fs.produced += 1;
        if index == 0 {
            let gb = self.new_genbuf(gen);
            self.flows[flow].gens.insert(gen, gb);
        }
        let pkt = CodedPacket::systematic(flow as u8, gen, h, index, payload);
        let gb = self.flows[flow].gens.get_mut(&gen).expect("created at index 0");
        let _ = gb.decoder.ingest(&pkt);
        gb.rows.push(pkt);
        let dests = sh.flows[flow].destinations.clone();
        for &d in &dests {
            self.credits.enqueue(flow, d, Credit { generation: gen, support: index + 1 });
        }
        if index + 1 == h && sh.scenario.coding.enabled {
            let fs = &mut self.flows[flow];
            fs.repair_acc += sh.scenario.coding.redundancy * h as f64;
            while fs.repair_acc >= 1.0 - 1e-9 {
                fs.repair_acc -= 1.0;
                for &d in &dests {
                    self.credits.enqueue(flow, d, Credit { generation: gen, support: h });
                }
            }
        }
    }

    fn estimate(&self, gb: &GenBuf) -> Estimate {
        match self.shared.scenario.coding.decoder {
            DecoderMode::FullRank => Estimate::Decoded(gb.decoder.decoded_mask().to_vec()),
            DecoderMode::RankDeficient => {
                let solver = MinWeightSearch { max_free: self.shared.scenario.coding.max_free };
                Estimate::Symbols(rank_deficient_solve(&self.shared.field, &gb.decoder, &solver))
            }
        }
    }

    fn on_data(&mut self, ctx: &mut Ctx, src: NodeId, pkt: CodedPacket) {
        let sh = self.shared.clone();
        let f = pkt.flow as usize;
        if f >= sh.flows.len() || pkt.tag.len() != sh.block_size {
            self.stats.malformed += 1;
            return;
        }
        let is_dest = sh.flows[f].has_destination(self.id);
        let served = match &self.session {
            Some(Session::Receiving { peer, flow, served, .. }) if *peer == src && *flow == f => Some(served.clone()),
            _ => None,
        };
        let in_session = served.is_some();
        if !(is_dest || in_session) {
            return;
        }
        self.stats.data_received += 1;
        let gen = pkt.generation;
        if !self.flows[f].gens.contains_key(&gen) {
            let gb = self.new_genbuf(gen);
            self.flows[f].gens.insert(gen, gb);
        }
        let track = is_dest && sh.scenario.coding.enabled;
        let (innovative, completes) = {
            let gb = &self.flows[f].gens[&gen];
            let inn = gb.decoder.is_innovative(&pkt);
            (inn, inn && gb.decoder.rank() + 1 == sh.block_size)
        };
        if track && completes {
            let estimate = self.estimate(&self.flows[f].gens[&gen]);
            ctx.out.push(Action::Report(Report::BeforeFullRank { flow: f, generation: gen, estimate }));
        }
        let gb = self.flows[f].gens.get_mut(&gen).expect("inserted");
        gb.received += 1;
        if innovative {
            gb.rows.push(pkt.clone());
            let decoded = gb.decoder.ingest(&pkt).unwrap_or_default();
            if is_dest {
                for d in decoded {
                    ctx.out.push(Action::Report(Report::Decoded {
                        flow: f,
                        generation: gen,
                        index: d.index,
                        payload: d.payload,
                    }));
                }
            }
        }
        // A packet handed over in a session moves into this node's queues even
        // when it adds no rank: any combination of the buffer serves as well.
        // Repair credits only follow innovative packets so loops cannot inflate them.
        if let Some(served) = served {
            *self.stats.data_from.entry(src).or_insert(0) += 1;
            let support = pkt.span();
            let eps = if innovative { sh.scenario.coding.redundancy } else { 0.0 };
            for d in served {
                self.credits.enqueue(f, d, Credit { generation: gen, support });
                let acc = self.flows[f].relay_acc.entry(d).or_insert(0.0);
                *acc += eps;
                if *acc >= 1.0 - 1e-9 {
                    *acc -= 1.0;
                    self.credits.enqueue(f, d, Credit { generation: gen, support });
                }
            }
        }
        if track {
            let gb = &self.flows[f].gens[&gen];
            let received = gb.received;
            let estimate = self.estimate(gb);
            ctx.out.push(Action::Report(Report::Accuracy { flow: f, generation: gen, received, estimate }));
        }
    }

    /// Backlog the node would advertise for one (flow, destination).
    pub fn virtual_backlog(&self, flow: usize, dest: NodeId) -> u32 {
        self.credits.backlog(flow, dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn hop_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(hop_next_channel(0, 1, &mut rng), 0);
            let c = hop_next_channel(1, 3, &mut rng);
            assert!(c < 3 && c != 1);
        }
        let seq = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = 0;
            (0..50)
                .map(|_| {
                    c = hop_next_channel(c, 3, &mut rng);
                    c
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(7), seq(7));
        // every channel other than the current is reachable
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = [0usize; 3];
        for _ in 0..3000 {
            seen[hop_next_channel(0, 3, &mut rng)] += 1;
        }
        assert_eq!(seen[0], 0);
        assert!(seen[1] > 1300 && seen[2] > 1300);
    }

    fn node(id: NodeId, sc: Scenario) -> Node {
        Node::new(id, Arc::new(Shared::new(sc)), ChaCha8Rng::seed_from_u64(id as u64))
    }

    fn collect(n: &mut Node, now: Micros, f: impl FnOnce(&mut Node, &mut Ctx)) -> Vec<Action> {
        let quiet = |_: usize| 0.0;
        let mut ctx = Ctx::new(now, &quiet);
        f(n, &mut ctx);
        ctx.out
    }

    #[test]
    fn syn_lists_every_virtual_backlog() {
        let mut sc = Scenario::builtin("butterfly7").unwrap();
        sc.flows.push(crate::channel::FlowSpec { src: 1, dsts: vec![4, 5], arrival_rate: 1.0 });
        let mut n = node(1, sc);
        assert!(n.make_syn().entries.is_empty());
        n.on_app_arrival(0, vec![0; n.shared.payload_symbols]);
        n.on_app_arrival(1, vec![0; n.shared.payload_symbols]);
        let syn = n.make_syn();
        assert_eq!(syn.entries.len(), 4);
        assert_eq!(syn.entries[0].destinations, vec![6, 7]);
        assert_eq!(syn.entries[1].destinations, vec![7, 6]);
    }

    #[test]
    fn dis_from_stranger_updates_table_in_any_phase() {
        let sc = Scenario::builtin("line7").unwrap();
        let mut a = node(2, sc.clone());
        let mut b = node(3, sc);
        let field = a.shared.field.clone();
        let noise = a.shared.noise_mw;
        let dis = Frame::Dis(b.make_dis(0)).encode(&field);
        collect(&mut a, 0, |n, ctx| n.start(ctx));
        collect(&mut a, 10, |n, ctx| n.on_frame(ctx, 3, noise * 300.0, &dis));
        assert_eq!(a.neighbors().len(), 1);
        let syn = Frame::Syn(a.make_syn()).encode(&field);
        collect(&mut b, 20, |n, ctx| n.on_frame(ctx, 2, noise * 300.0, &syn));
        assert!(b.neighbors().contains_key(&2));
        let rec = &a.neighbors()[&3];
        assert!((rec.snr[&a.channel()] - 300.0).abs() < 1e-9);
    }

    #[test]
    fn malformed_frames_are_counted_and_dropped() {
        let mut a = node(2, Scenario::builtin("line7").unwrap());
        collect(&mut a, 0, |n, ctx| n.on_frame(ctx, 3, 1.0, &[0x42, 1]));
        assert_eq!(a.stats().malformed, 1);
        assert!(a.neighbors().is_empty());
    }

    #[test]
    fn discovery_lasts_ttr() {
        let mut sc = Scenario::builtin("line7").unwrap();
        sc.timing.discovery_visits = 3;
        let mut a = node(1, sc);
        let out = collect(&mut a, 0, |n, ctx| n.start(ctx));
        let end = out
            .iter()
            .find_map(|x| match x {
                Action::SetTimer { at, timer } if timer.kind == TimerKind::PhaseEnd => Some(*at),
                _ => None,
            })
            .unwrap();
        assert_eq!(end, micros(6.0));
        assert_eq!(a.phase(), Phase::Discovery);
    }

    #[test]
    fn source_credits_and_repairs() {
        let mut sc = Scenario::builtin("butterfly7").unwrap();
        sc.coding.block_size = 4;
        sc.coding.redundancy = 0.5;
        let mut n = node(1, sc);
        let len = n.shared.payload_symbols;
        for _ in 0..4 {
            n.on_app_arrival(0, vec![1; len]);
        }
        // 4 systematic + 2 repairs per destination
        assert_eq!(n.virtual_backlog(0, 6), 6);
        assert_eq!(n.virtual_backlog(0, 7), 6);
        let supports: Vec<usize> = std::iter::from_fn(|| n.credits.dequeue(0, 6).map(|c| c.support)).collect();
        assert_eq!(supports, vec![1, 2, 3, 4, 4, 4]);
    }
}
