//! Event loop tying the radio, MAC, routing and application layers together.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::channel::{distance, ChannelModel, ChannelParams, Medium};
use super::energy::{EnergyLedger, EnergyParams, RadioState};
use super::event::{from_secs, secs, EventQueue, Time};
use super::mac::{AckTimeoutOutcome, CcaOutcome, Enqueued, Frame, Mac, MacParams, QueueDiscipline, TxEndOutcome};
use super::mobility::Mobility;
use super::record::{LossCause, PacketRecord};
use super::seed::derive_seed;
use super::trace::Trace;
use crate::app::message::{AlertCause, Message, Payload, BROADCAST};
use crate::app::product::{AppNote, ProductAction, ProductEvent, ProductState, ProductTimer};
use crate::app::sink::{AlertRecord, Provision, QueryKind, SinkAction, SinkEvent, SinkNote, SinkState};
use crate::app::ProductConfig;
use crate::net::{
    handle_hello, next_alert_hop, reconcile, route_alert, route_routine, source_next_hops, start_gradient_round,
    AlertConfig, AlertDecision, Hello, InfoRsp, Packet, PacketBody, RoutineConfig, RoutineDecision, RoutingState,
    TrafficClass,
};
use crate::rrr::{rrr_route, RrrConfig, RrrDecision, RrrState};
use crate::{NodeId, SecurityLevel, SINK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    /// Disjoint multipath alerts plus energy-aware routine forwarding.
    Ours,
    Rrr,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Ours => "ours",
            Protocol::Rrr => "rrr",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ours" => Ok(Protocol::Ours),
            "rrr" => Ok(Protocol::Rrr),
            _ => Err(format!("unknown protocol `{s}` (expected ours or rrr)")),
        }
    }
}

/// How sink-to-product messages travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Downlink {
    /// Delivered after one frame airtime, never lost.
    Ideal,
    /// Sent over the shared channel from the sink at `sink_tx_power_dbm`.
    Radio,
}

/// Synthetic load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficSpec {
    /// Routine packets per second per product.
    pub routine_rate: f64,
    /// Alert packets per second per alert source.
    pub alert_rate: f64,
    pub alert_sources: usize,
    /// No generation before this time, seconds.
    pub warmup: f64,
    /// No generation during the last `cooldown` seconds.
    pub cooldown: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductSetup {
    pub config: ProductConfig,
    /// Boot time, seconds.
    pub start: f64,
    /// Sensor readings taken once supervising, one per sample period. The
    /// last value repeats. Empty means the sensor is never sampled.
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorQuery {
    pub at: f64,
    pub target: NodeId,
    pub query: QueryKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppSetup {
    pub provision: Provision,
    pub overrides: Vec<(NodeId, Provision)>,
    pub products: Vec<ProductSetup>,
    pub queries: Vec<OperatorQuery>,
}

/// Everything one trial needs. Node 0 is the sink.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub protocol: Protocol,
    pub duration: f64,
    pub nodes: Vec<Mobility>,
    pub channel: ChannelParams,
    pub mac: MacParams,
    pub energy: EnergyParams,
    pub tx_power_dbm: f64,
    pub sink_tx_power_dbm: f64,
    pub downlink: Downlink,
    pub alert: AlertConfig,
    pub routine: RoutineConfig,
    pub rrr: RrrConfig,
    pub gradient_period: f64,
    pub hello_jitter: f64,
    /// HELLO and INFO_RSP frames received with less than this margin over
    /// the decoding threshold do not create neighbour entries.
    pub link_margin_db: f64,
    /// Treat a failed alert transmission like a refusal and try the next
    /// neighbour instead of dropping the copy.
    pub alert_mac_reroute: bool,
    pub traffic: Option<TrafficSpec>,
    pub app: Option<AppSetup>,
    pub trace: bool,
}

impl SimConfig {
    /// Defaults for everything except placement and protocol.
    pub fn new(protocol: Protocol, nodes: Vec<Mobility>, duration: f64) -> Self {
        Self {
            protocol,
            duration,
            nodes,
            channel: ChannelParams::default(),
            mac: MacParams::default(),
            energy: EnergyParams::default(),
            tx_power_dbm: 0.0,
            sink_tx_power_dbm: 20.0,
            downlink: Downlink::Ideal,
            alert: AlertConfig::default(),
            routine: RoutineConfig::default(),
            rrr: RrrConfig::default(),
            gradient_period: 100.0,
            hello_jitter: 0.02,
            link_margin_db: 3.0,
            alert_mac_reroute: false,
            traffic: None,
            app: None,
            trace: false,
        }
    }
}

/// One delivered alert copy and the nodes it crossed, origin and sink included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlertDelivery {
    pub origin: NodeId,
    pub seq: u16,
    pub path_id: u8,
    pub trail: Vec<NodeId>,
    pub at: Time,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeEnergy {
    pub consumed: f64,
    /// Consumption implied by radio-state occupancy.
    pub expected: f64,
    pub remaining: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrialStats {
    pub events: u64,
    pub data_frames: u64,
    pub ack_frames: u64,
    pub mac_busy_drops: u64,
    pub mac_ack_failures: u64,
    pub inuse_sent: u64,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub records: Vec<PacketRecord>,
    pub trace: Trace,
    pub alert_deliveries: Vec<AlertDelivery>,
    pub energy: Vec<NodeEnergy>,
    pub gradients: Vec<Option<u8>>,
    pub sink_alerts: Vec<AlertRecord>,
    pub products: BTreeMap<NodeId, ProductState>,
    pub stats: TrialStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MacEv {
    Cca,
    TxStart,
    AckTimeout,
}

#[derive(Debug, Clone, PartialEq)]
enum Ev {
    GradientRound,
    HelloSend(NodeId),
    Mac { node: NodeId, gen: u64, kind: MacEv },
    TxEnd(u64),
    AckSend { node: NodeId, to: NodeId, mac_seq: u8 },
    InfoRspSend(NodeId),
    GatherEnd { node: NodeId, epoch: u32 },
    TrafficStart,
    Traffic { node: NodeId, class: TrafficClass },
    AppStart(NodeId),
    AppTimer { node: NodeId, timer: ProductTimer },
    Sample(NodeId),
    Downlink(Message),
    Operator(usize),
}

#[derive(Debug, Clone)]
enum TxKind {
    Data,
    Ack { to: NodeId, mac_seq: u8 },
}

#[derive(Debug, Clone)]
struct TxInfo {
    sender: NodeId,
    end: Time,
    kind: TxKind,
    rx_dbm: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PendingAlert {
    packet: Packet,
    tried: BTreeSet<NodeId>,
    sent_to: NodeId,
    since: f64,
}

#[derive(Debug, Clone)]
struct Gather {
    epoch: u32,
    attempt: u8,
    responders: Vec<InfoRsp>,
}

struct Node {
    alive: bool,
    mac: Mac,
    energy: EnergyLedger,
    tx_active: Option<u64>,
    routing: RoutingState,
    rrr: RrrState,
    hello_pending: bool,
    rsp_pending: bool,
    pending_alerts: BTreeMap<(NodeId, u16, u8), PendingAlert>,
    routine_buf: VecDeque<Packet>,
    gather: Option<Gather>,
    epoch: u32,
    mac_seen: BTreeMap<NodeId, u8>,
    net_seq: u16,
    product: Option<ProductState>,
    samples: Vec<f64>,
    sample_idx: usize,
}

struct Rngs {
    mac: ChaCha8Rng,
    jitter: ChaCha8Rng,
    traffic: ChaCha8Rng,
    rrr: ChaCha8Rng,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    now: Time,
    end: Time,
    queue: EventQueue<Ev>,
    nodes: Vec<Node>,
    channel: ChannelModel,
    /// Static link gains (dB) when nothing moves, row-major.
    gain: Option<Vec<f64>>,
    medium: Medium,
    txs: BTreeMap<u64, TxInfo>,
    next_tx: u64,
    rng: Rngs,
    records: Vec<PacketRecord>,
    synthetic: Vec<bool>,
    trace: Trace,
    deliveries: Vec<AlertDelivery>,
    sink_app: Option<SinkState>,
    stats: TrialStats,
    traffic_stop: Time,
}

/// Run one trial.
pub fn run_trial(cfg: &SimConfig, seed: u64) -> TrialResult {
    let mut sim = Sim::new(cfg, seed);
    sim.run();
    sim.finish()
}

fn level_name(l: SecurityLevel) -> String {
    l.to_string()
}

fn peer(id: NodeId) -> String {
    if id == BROADCAST {
        "all".to_owned()
    } else {
        id.to_string()
    }
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, seed: u64) -> Self {
        let n = cfg.nodes.len();
        let channel = ChannelModel::new(cfg.channel, n, derive_seed(seed, &["shadowing"]));
        let gain = cfg.nodes.iter().all(Mobility::is_static).then(|| {
            let mut g = vec![0.0; n * n];
            for a in 0..n {
                for b in 0..n {
                    if a != b {
                        let d = distance(cfg.nodes[a].start, cfg.nodes[b].start);
                        g[a * n + b] = channel.rx_power_dbm(0.0, a, b, d);
                    }
                }
            }
            g
        });
        let discipline = match cfg.protocol {
            Protocol::Ours => QueueDiscipline::Priority,
            Protocol::Rrr => QueueDiscipline::Fifo,
        };
        let mut products: BTreeMap<NodeId, (ProductState, Vec<f64>)> = BTreeMap::new();
        if let Some(app) = &cfg.app {
            for p in &app.products {
                products.insert(p.config.id, (ProductState::new(p.config.clone()), p.samples.clone()));
            }
        }
        let nodes = (0..n)
            .map(|i| {
                let id = i as NodeId;
                let (product, samples) = match products.remove(&id) {
                    Some((p, s)) => (Some(p), s),
                    None => (None, Vec::new()),
                };
                Node {
                    alive: true,
                    mac: Mac::new(cfg.mac, discipline),
                    energy: EnergyLedger::new(cfg.energy, id == SINK),
                    tx_active: None,
                    routing: RoutingState::new(id),
                    rrr: RrrState::new(cfg.rrr),
                    hello_pending: false,
                    rsp_pending: false,
                    pending_alerts: BTreeMap::new(),
                    routine_buf: VecDeque::new(),
                    gather: None,
                    epoch: 0,
                    mac_seen: BTreeMap::new(),
                    net_seq: 0,
                    product,
                    samples,
                    sample_idx: 0,
                }
            })
            .collect();
        let rng = Rngs {
            mac: ChaCha8Rng::seed_from_u64(derive_seed(seed, &["mac"])),
            jitter: ChaCha8Rng::seed_from_u64(derive_seed(seed, &["jitter"])),
            traffic: ChaCha8Rng::seed_from_u64(derive_seed(seed, &["traffic"])),
            rrr: ChaCha8Rng::seed_from_u64(derive_seed(seed, &["rrr"])),
        };
        let sink_app = cfg.app.as_ref().map(|a| {
            let mut s = SinkState::new(a.provision.clone());
            for (id, p) in &a.overrides {
                s.provision(*id, p.clone());
            }
            s
        });
        let traffic_stop = cfg.traffic.map(|t| from_secs((cfg.duration - t.cooldown).max(0.0))).unwrap_or(0);
        Self {
            cfg,
            now: 0,
            end: from_secs(cfg.duration),
            queue: EventQueue::new(),
            nodes,
            channel,
            gain,
            medium: Medium::new(&cfg.channel, n),
            txs: BTreeMap::new(),
            next_tx: 0,
            rng,
            records: Vec::new(),
            synthetic: Vec::new(),
            trace: Trace::new(cfg.trace),
            deliveries: Vec::new(),
            sink_app,
            stats: TrialStats::default(),
            traffic_stop,
        }
    }

    fn at(&mut self, delay_s: f64, ev: Ev) {
        let t = self.now + from_secs(delay_s.max(0.0));
        self.queue.push(t, ev);
    }

    fn at_ns(&mut self, delay: Time, ev: Ev) {
        self.queue.push(self.now + delay, ev);
    }

    fn now_s(&self) -> f64 {
        secs(self.now)
    }

    fn note(&mut self, node: NodeId, event: &'static str, attrs: Vec<(&'static str, String)>) {
        self.trace.push(self.now, node, event, attrs);
    }

    fn run(&mut self) {
        self.queue.push(0, Ev::GradientRound);
        if let Some(t) = self.cfg.traffic {
            self.queue.push(from_secs(t.warmup), Ev::TrafficStart);
        }
        if let Some(app) = &self.cfg.app {
            for p in &app.products {
                self.queue.push(from_secs(p.start), Ev::AppStart(p.config.id));
            }
            for (i, q) in app.queries.iter().enumerate() {
                self.queue.push(from_secs(q.at), Ev::Operator(i));
            }
        }
        while let Some((t, ev)) = self.queue.pop() {
            if t > self.end {
                break;
            }
            self.now = t;
            self.stats.events += 1;
            self.dispatch(ev);
        }
        self.now = self.end;
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::GradientRound => {
                let hello = start_gradient_round(&mut self.nodes[SINK as usize].routing);
                self.send_hello(SINK, hello);
                self.at(self.cfg.gradient_period, Ev::GradientRound);
            }
            Ev::HelloSend(n) => {
                let node = &mut self.nodes[n as usize];
                node.hello_pending = false;
                if let (true, Some(hc)) = (node.alive, node.routing.my_gradient) {
                    let hello = Hello { round: node.routing.round, hc, sa: n };
                    self.send_hello(n, hello);
                }
            }
            Ev::Mac { node, gen, kind } => self.on_mac_timer(node, gen, kind),
            Ev::TxEnd(id) => self.on_tx_end(id),
            Ev::AckSend { node, to, mac_seq } => self.send_ack(node, to, mac_seq),
            Ev::InfoRspSend(n) => {
                let node = &mut self.nodes[n as usize];
                node.rsp_pending = false;
                if let (true, Some(hc)) = (node.alive, node.routing.my_gradient) {
                    node.energy.advance(self.now);
                    let rsp = InfoRsp { id: n, hc, energy_mj: InfoRsp::energy_to_fixed(node.energy.remaining()) };
                    self.enqueue(n, BROADCAST, Packet::control(n, PacketBody::InfoRsp(rsp)));
                }
            }
            Ev::GatherEnd { node, epoch } => self.on_gather_end(node, epoch),
            Ev::TrafficStart => self.start_traffic(),
            Ev::Traffic { node, class } => self.on_traffic(node, class),
            Ev::AppStart(n) => self.product_event(n, ProductEvent::Start),
            Ev::AppTimer { node, timer } => self.product_event(node, ProductEvent::Timer(timer)),
            Ev::Sample(n) => self.on_sample(n),
            Ev::Downlink(msg) => {
                let to = msg.dst;
                self.note(to, "RECV", vec![("kind", msg.kind().name().to_owned()), ("from", peer(msg.src))]);
                self.product_event(to, ProductEvent::Received { msg, rssi_dbm: None });
            }
            Ev::Operator(i) => {
                let q = self.cfg.app.as_ref().expect("operator query without app").queries[i].clone();
                self.sink_event(SinkEvent::Operator { query: q.query, target: q.target });
            }
        }
    }

    // ---- radio and MAC ----

    fn rx_vector(&self, sender: NodeId, power_dbm: f64) -> Vec<f64> {
        let n = self.nodes.len();
        let s = sender as usize;
        match &self.gain {
            Some(g) => g[s * n..(s + 1) * n].iter().map(|x| x + power_dbm).collect(),
            None => {
                let t = self.now_s();
                let here = self.cfg.nodes[s].position(t);
                (0..n)
                    .map(|r| {
                        if r == s {
                            f64::NEG_INFINITY
                        } else {
                            let d = distance(here, self.cfg.nodes[r].position(t));
                            self.channel.rx_power_dbm(power_dbm, s, r, d)
                        }
                    })
                    .collect()
            }
        }
    }

    fn start_radio_tx(&mut self, sender: NodeId, power_dbm: f64, airtime: Time, kind: TxKind) {
        let id = self.next_tx;
        self.next_tx += 1;
        let rx_dbm = self.rx_vector(sender, power_dbm);
        let can: Vec<bool> = self.nodes.iter().map(|nd| nd.alive && nd.tx_active.is_none()).collect();
        self.medium.start_tx(id, sender as usize, &rx_dbm, &can);
        let end = self.now + airtime;
        self.txs.insert(id, TxInfo { sender, end, kind, rx_dbm });
        self.nodes[sender as usize].tx_active = Some(id);
        self.set_radio(sender, RadioState::Transmit);
        self.queue.push(end, Ev::TxEnd(id));
    }

    fn set_radio(&mut self, n: NodeId, s: RadioState) {
        let node = &mut self.nodes[n as usize];
        node.energy.set_state(self.now, s);
        if node.alive && node.energy.depleted() {
            self.kill(n);
        }
    }

    fn kill(&mut self, n: NodeId) {
        let node = &mut self.nodes[n as usize];
        node.alive = false;
        let frames = node.mac.drain();
        let buffered: Vec<Packet> = node.routine_buf.drain(..).collect();
        node.pending_alerts.clear();
        node.gather = None;
        self.note(n, "DEPLETED", vec![]);
        for f in frames {
            self.lose(&f.packet, LossCause::Depleted);
        }
        for p in buffered {
            self.lose(&p, LossCause::Depleted);
        }
    }

    fn kick(&mut self, n: NodeId) {
        let node = &mut self.nodes[n as usize];
        if !node.alive {
            return;
        }
        if let Some(d) = node.mac.kick(&mut self.rng.mac) {
            let gen = node.mac.gen();
            self.at_ns(d, Ev::Mac { node: n, gen, kind: MacEv::Cca });
        }
    }

    fn enqueue(&mut self, n: NodeId, dst: NodeId, packet: Packet) {
        let power = if n == SINK && matches!(packet.body, PacketBody::Local(_)) {
            self.cfg.sink_tx_power_dbm
        } else {
            self.cfg.tx_power_dbm
        };
        let frame = Frame { src: n, dst, packet, power_dbm: power, mac_seq: 0, retries: 0 };
        if !self.nodes[n as usize].alive {
            self.lose(&frame.packet, LossCause::Depleted);
            return;
        }
        match self.nodes[n as usize].mac.enqueue(frame) {
            Enqueued::Accepted => {}
            Enqueued::Rejected(f) | Enqueued::Evicted(f) => self.frame_failed(n, f, LossCause::Queue),
        }
        self.kick(n);
    }

    fn on_mac_timer(&mut self, n: NodeId, gen: u64, kind: MacEv) {
        let node = &self.nodes[n as usize];
        if !node.alive || node.mac.gen() != gen {
            return;
        }
        match kind {
            MacEv::Cca => {
                let busy = node.tx_active.is_some()
                    || self.medium.is_receiving(n as usize)
                    || self.medium.sensed_dbm(n as usize) >= self.cfg.channel.cca_threshold_dbm;
                let node = &mut self.nodes[n as usize];
                match node.mac.on_cca(busy, &mut self.rng.mac) {
                    CcaOutcome::Transmit(d) => {
                        let gen = node.mac.gen();
                        self.at_ns(d, Ev::Mac { node: n, gen, kind: MacEv::TxStart });
                    }
                    CcaOutcome::Backoff(d) => {
                        let gen = node.mac.gen();
                        self.at_ns(d, Ev::Mac { node: n, gen, kind: MacEv::Cca });
                    }
                    CcaOutcome::Drop(f) => {
                        self.stats.mac_busy_drops += 1;
                        self.frame_failed(n, f, LossCause::MacBusy);
                        self.kick(n);
                    }
                }
            }
            MacEv::TxStart => {
                if let Some(active) = node.tx_active {
                    // still sending an acknowledgement
                    let end = self.txs[&active].end;
                    self.queue.push(end + 1, Ev::Mac { node: n, gen, kind });
                    return;
                }
                let node = &mut self.nodes[n as usize];
                let f = node.mac.begin_tx();
                let (power, len) = (f.power_dbm, f.packet.wire_len());
                let airtime = self.cfg.mac.airtime(len);
                self.stats.data_frames += 1;
                self.start_radio_tx(n, power, airtime, TxKind::Data);
            }
            MacEv::AckTimeout => {
                let node = &mut self.nodes[n as usize];
                match node.mac.on_ack_timeout(&mut self.rng.mac) {
                    AckTimeoutOutcome::Retry(d) => {
                        let gen = node.mac.gen();
                        self.at_ns(d, Ev::Mac { node: n, gen, kind: MacEv::Cca });
                    }
                    AckTimeoutOutcome::Failed(f) => {
                        self.stats.mac_ack_failures += 1;
                        self.frame_failed(n, f, LossCause::Channel);
                        self.kick(n);
                    }
                }
            }
        }
    }

    fn send_ack(&mut self, n: NodeId, to: NodeId, mac_seq: u8) {
        let node = &self.nodes[n as usize];
        if !node.alive || node.tx_active.is_some() {
            return;
        }
        self.stats.ack_frames += 1;
        let airtime = self.cfg.mac.ack_airtime();
        self.start_radio_tx(n, self.cfg.tx_power_dbm, airtime, TxKind::Ack { to, mac_seq });
    }

    fn on_tx_end(&mut self, id: u64) {
        let decoded = self.medium.end_tx(id);
        let info = self.txs.remove(&id).expect("unknown transmission");
        let s = info.sender;
        self.nodes[s as usize].tx_active = None;
        self.set_radio(s, RadioState::Listen);
        match info.kind {
            TxKind::Ack { to, mac_seq } => {
                if decoded.contains(&(to as usize)) && self.nodes[to as usize].alive {
                    if let Some(f) = self.nodes[to as usize].mac.on_ack(mac_seq) {
                        self.frame_sent(to, f);
                        self.kick(to);
                    }
                }
            }
            TxKind::Data => {
                if !self.nodes[s as usize].alive {
                    return;
                }
                let frame = self.nodes[s as usize].mac.current().cloned().expect("data frame without owner");
                for r in decoded {
                    if self.nodes[r].alive {
                        self.on_frame(r as NodeId, &frame, info.rx_dbm[r]);
                    }
                }
                let node = &mut self.nodes[s as usize];
                match node.mac.on_tx_end() {
                    TxEndOutcome::AwaitAck(w) => {
                        let gen = node.mac.gen();
                        self.at_ns(w, Ev::Mac { node: s, gen, kind: MacEv::AckTimeout });
                    }
                    TxEndOutcome::Done(f) => {
                        self.frame_sent(s, f);
                        self.kick(s);
                    }
                }
            }
        }
    }

    fn on_frame(&mut self, r: NodeId, frame: &Frame, rssi: f64) {
        let now = self.now_s();
        let node = &mut self.nodes[r as usize];
        node.routing.touch(frame.src, now);
        if frame.dst != BROADCAST {
            if frame.dst != r {
                return;
            }
            let dup = node.mac_seen.insert(frame.src, frame.mac_seq) == Some(frame.mac_seq);
            self.at_ns(self.cfg.mac.turnaround, Ev::AckSend { node: r, to: frame.src, mac_seq: frame.mac_seq });
            if dup {
                return;
            }
        }
        self.on_packet(r, frame.src, frame.packet.clone(), rssi);
    }

    /// Frame left the MAC successfully (broadcast sent or unicast acked).
    fn frame_sent(&mut self, n: NodeId, f: Frame) {
        if let PacketBody::InfoReq { .. } = f.packet.body {
            if let Some(g) = &self.nodes[n as usize].gather {
                let epoch = g.epoch;
                self.at(self.cfg.routine.window, Ev::GatherEnd { node: n, epoch });
            }
        }
    }

    fn frame_failed(&mut self, n: NodeId, f: Frame, cause: LossCause) {
        match f.packet.body {
            PacketBody::Data(_) => {
                let reroute = self.cfg.protocol == Protocol::Ours
                    && self.cfg.alert_mac_reroute
                    && f.packet.class == TrafficClass::Alert
                    && cause != LossCause::Queue
                    && self.nodes[n as usize].alive;
                if reroute {
                    self.alert_reroute(n, f.packet, f.dst, cause.name());
                } else {
                    self.lose(&f.packet, cause);
                }
            }
            PacketBody::InfoReq { .. } => {
                if let Some(g) = &self.nodes[n as usize].gather {
                    let epoch = g.epoch;
                    self.at(0.0, Ev::GatherEnd { node: n, epoch });
                }
            }
            _ => {}
        }
    }

    // ---- records ----

    fn new_record(&mut self, pkt: &mut Packet, synthetic: bool) {
        let idx = self.records.len() as u32;
        self.records.push(PacketRecord {
            class: pkt.class,
            origin: pkt.origin,
            seq: pkt.seq,
            birth: self.now,
            delivery: None,
            loss: None,
            hops: 0,
            path_id: pkt.path_id,
        });
        self.synthetic.push(synthetic);
        pkt.tag = Some(idx);
    }

    fn lose(&mut self, pkt: &Packet, cause: LossCause) {
        let Some(tag) = pkt.tag else { return };
        let rec = &mut self.records[tag as usize];
        if rec.delivery.is_some() || rec.loss.is_some() {
            return;
        }
        rec.loss = Some(cause);
        rec.hops = pkt.hops;
        let attrs = vec![
            ("class", pkt.class.name().to_owned()),
            ("origin", pkt.origin.to_string()),
            ("seq", pkt.seq.to_string()),
            ("path", pkt.path_id.to_string()),
            ("cause", cause.name().to_owned()),
        ];
        let at = pkt.trail.last().copied().unwrap_or(pkt.origin);
        self.note(at, "DROP", attrs);
    }

    fn deliver(&mut self, pkt: &Packet) {
        let Some(tag) = pkt.tag else { return };
        let first = {
            let rec = &mut self.records[tag as usize];
            let first = rec.delivery.is_none();
            if first {
                rec.delivery = Some(self.now);
                rec.loss = None;
                rec.hops = pkt.hops;
            }
            first
        };
        if !first {
            return;
        }
        if pkt.class == TrafficClass::Alert {
            self.deliveries.push(AlertDelivery {
                origin: pkt.origin,
                seq: pkt.seq,
                path_id: pkt.path_id,
                trail: pkt.trail.clone(),
                at: self.now,
            });
        }
        self.note(
            SINK,
            "DELIVER",
            vec![
                ("class", pkt.class.name().to_owned()),
                ("origin", pkt.origin.to_string()),
                ("seq", pkt.seq.to_string()),
                ("path", pkt.path_id.to_string()),
                ("hops", pkt.hops.to_string()),
            ],
        );
        if !self.synthetic[tag as usize] {
            if let Some(m) = pkt.message().cloned() {
                self.note(SINK, "RECV", vec![("kind", m.kind().name().to_owned()), ("from", peer(m.src))]);
                self.sink_event(SinkEvent::Received(m));
            }
        }
    }

    // ---- network layer ----

    fn send_hello(&mut self, n: NodeId, h: Hello) {
        self.enqueue(n, BROADCAST, Packet::control(n, PacketBody::Hello(h)));
    }

    fn on_packet(&mut self, r: NodeId, from: NodeId, mut pkt: Packet, rssi: f64) {
        let now = self.now_s();
        let weak = rssi < self.cfg.channel.sensitivity_dbm() + self.cfg.link_margin_db;
        match pkt.body {
            PacketBody::Hello(_) | PacketBody::InfoRsp(_) if weak => {}
            PacketBody::Hello(h) => {
                let node = &mut self.nodes[r as usize];
                let before = node.routing.my_gradient;
                if handle_hello(&mut node.routing, h, now).is_some() {
                    let after = node.routing.my_gradient;
                    if !node.hello_pending {
                        node.hello_pending = true;
                        let d = self.rng.jitter.random_range(0.0..=self.cfg.hello_jitter);
                        self.at(d, Ev::HelloSend(r));
                    }
                    if before != after {
                        let hc = after.map(|g| g.to_string()).unwrap_or_default();
                        let round = self.nodes[r as usize].routing.round.to_string();
                        self.note(r, "GRADIENT", vec![("hc", hc), ("round", round)]);
                    }
                }
            }
            PacketBody::InfoReq { requester } => {
                let node = &mut self.nodes[r as usize];
                // a requester at hop count h only considers responders up to h + 1
                let useful = match (node.routing.my_gradient, node.routing.neighbors.get(&requester)) {
                    (Some(g), Some(e)) => g <= e.hc.saturating_add(1),
                    (Some(_), None) => true,
                    (None, _) => false,
                };
                if self.cfg.protocol == Protocol::Ours && useful && !node.rsp_pending {
                    node.rsp_pending = true;
                    let d = self.rng.jitter.random_range(0.0..=self.cfg.routine.window / 2.0);
                    self.at(d, Ev::InfoRspSend(r));
                }
            }
            PacketBody::InfoRsp(rsp) => {
                let node = &mut self.nodes[r as usize];
                if let Some(g) = node.gather.as_mut() {
                    if !g.responders.iter().any(|x| x.id == rsp.id) {
                        g.responders.push(rsp);
                    }
                }
            }
            PacketBody::InUse { originator, seq } => self.on_inuse(r, from, originator, seq),
            PacketBody::Local(ref m) => {
                if r == SINK || self.nodes[r as usize].product.is_none() {
                    return;
                }
                let msg = m.clone();
                let mut attrs = vec![("kind", msg.kind().name().to_owned()), ("from", peer(msg.src))];
                if matches!(msg.payload, Payload::Gre { .. } | Payload::Rsi { .. }) {
                    attrs.push(("rssi", format!("{rssi:.1}")));
                }
                self.note(r, "RECV", attrs);
                let rssi = (msg.src != SINK).then_some(rssi);
                self.product_event(r, ProductEvent::Received { msg, rssi_dbm: rssi });
            }
            PacketBody::Data(_) => {
                pkt.hops = pkt.hops.saturating_add(1);
                pkt.trail.push(r);
                if r == SINK {
                    self.deliver(&pkt);
                    return;
                }
                match (self.cfg.protocol, pkt.class) {
                    (Protocol::Rrr, _) => self.rrr_forward(r, pkt),
                    (Protocol::Ours, TrafficClass::Alert) => self.alert_forward(r, from, pkt),
                    (Protocol::Ours, _) => self.routine_buffer(r, pkt),
                }
            }
        }
    }

    /// A new packet from the local application or traffic generator.
    fn originate(&mut self, n: NodeId, msg: Message, synthetic: bool) {
        let node = &mut self.nodes[n as usize];
        let seq = node.net_seq;
        node.net_seq = node.net_seq.wrapping_add(1);
        let mut pkt = Packet::data(msg, seq);
        if !synthetic {
            let m = pkt.message().expect("data packet");
            let attrs = vec![("kind", m.kind().name().to_owned()), ("to", peer(m.dst))];
            self.note(n, "SENT", attrs);
        }
        if !self.nodes[n as usize].alive {
            self.new_record(&mut pkt, synthetic);
            self.lose(&pkt, LossCause::Depleted);
            return;
        }
        match (self.cfg.protocol, pkt.class) {
            (Protocol::Ours, TrafficClass::Alert) => {
                let hops = source_next_hops(&self.nodes[n as usize].routing, self.cfg.alert.copies as usize);
                let hops: Vec<NodeId> = hops.into_iter().flatten().collect();
                if hops.is_empty() {
                    self.new_record(&mut pkt, synthetic);
                    self.lose(&pkt, LossCause::NoRoute);
                    return;
                }
                for (j, nh) in hops.into_iter().enumerate() {
                    let mut copy = pkt.clone();
                    copy.path_id = j as u8;
                    self.new_record(&mut copy, synthetic);
                    self.send_alert(n, copy, nh, BTreeSet::new());
                }
            }
            (Protocol::Ours, _) => {
                self.new_record(&mut pkt, synthetic);
                self.routine_buffer(n, pkt);
            }
            (Protocol::Rrr, _) => {
                self.new_record(&mut pkt, synthetic);
                self.rrr_forward(n, pkt);
            }
        }
    }

    fn rrr_forward(&mut self, n: NodeId, pkt: Packet) {
        let now = self.now_s();
        let node = &mut self.nodes[n as usize];
        match rrr_route(&node.routing, &mut node.rrr, &pkt, now, &mut self.rng.rrr) {
            RrrDecision::Forward(nh) => self.enqueue(n, nh, pkt),
            RrrDecision::NoRoute => self.lose(&pkt, LossCause::NoRoute),
            RrrDecision::TtlExceeded => self.lose(&pkt, LossCause::Ttl),
        }
    }

    fn send_alert(&mut self, n: NodeId, pkt: Packet, nh: NodeId, tried: BTreeSet<NodeId>) {
        let now = self.now_s();
        let life = self.cfg.alert.inuse_lifetime;
        let node = &mut self.nodes[n as usize];
        node.pending_alerts.retain(|_, p| now - p.since <= 2.0 * life);
        let key = (pkt.origin, pkt.seq, pkt.path_id);
        node.pending_alerts.insert(key, PendingAlert { packet: pkt.clone(), tried, sent_to: nh, since: now });
        self.enqueue(n, nh, pkt);
    }

    fn alert_forward(&mut self, r: NodeId, from: NodeId, pkt: Packet) {
        let now = self.now_s();
        let node = &mut self.nodes[r as usize];
        match route_alert(&mut node.routing, &pkt, now, &BTreeSet::new(), &self.cfg.alert) {
            AlertDecision::Forward(nh) => self.send_alert(r, pkt, nh, BTreeSet::new()),
            AlertDecision::AcceptAtSink => self.deliver(&pkt),
            AlertDecision::RejectInUse => {
                self.stats.inuse_sent += 1;
                let attrs = vec![
                    ("origin", pkt.origin.to_string()),
                    ("seq", pkt.seq.to_string()),
                    ("path", pkt.path_id.to_string()),
                    ("to", from.to_string()),
                ];
                self.note(r, "INUSE", attrs);
                let body = PacketBody::InUse { originator: pkt.origin, seq: pkt.seq };
                self.enqueue(r, from, Packet::control(r, body));
            }
            AlertDecision::DeadEnd => {
                self.note(r, "DEAD_END", vec![("origin", pkt.origin.to_string()), ("seq", pkt.seq.to_string())]);
                self.lose(&pkt, LossCause::DeadEnd);
            }
        }
    }

    fn on_inuse(&mut self, x: NodeId, from: NodeId, originator: NodeId, seq: u16) {
        let node = &self.nodes[x as usize];
        let hit = node
            .pending_alerts
            .iter()
            .find(|((o, s, _), p)| *o == originator && *s == seq && p.sent_to == from)
            .map(|(_, p)| p.packet.clone());
        if let Some(pkt) = hit {
            self.alert_reroute(x, pkt, from, "inuse");
        }
    }

    /// `refuser` will not carry this copy; try the next candidate.
    fn alert_reroute(&mut self, x: NodeId, pkt: Packet, refuser: NodeId, reason: &'static str) {
        let attrs = vec![
            ("origin", pkt.origin.to_string()),
            ("seq", pkt.seq.to_string()),
            ("path", pkt.path_id.to_string()),
            ("refuser", refuser.to_string()),
            ("reason", reason.to_owned()),
        ];
        self.note(x, "REROUTE", attrs);
        let key = (pkt.origin, pkt.seq, pkt.path_id);
        let node = &mut self.nodes[x as usize];
        let Some(mut pend) = node.pending_alerts.remove(&key) else {
            self.lose(&pkt, LossCause::DeadEnd);
            return;
        };
        pend.tried.insert(refuser);
        match next_alert_hop(&node.routing, &pend.packet, &pend.tried, &self.cfg.alert) {
            Some(nh) => self.send_alert(x, pend.packet, nh, pend.tried),
            None => {
                self.note(x, "DEAD_END", vec![("origin", pkt.origin.to_string()), ("seq", pkt.seq.to_string())]);
                self.lose(&pend.packet, LossCause::DeadEnd);
            }
        }
    }

    fn routine_buffer(&mut self, n: NodeId, pkt: Packet) {
        let cap = self.cfg.mac.queue_capacity;
        let node = &mut self.nodes[n as usize];
        if node.routine_buf.len() >= cap {
            self.lose(&pkt, LossCause::Queue);
            return;
        }
        node.routine_buf.push_back(pkt);
        if node.gather.is_none() {
            node.epoch += 1;
            node.gather = Some(Gather { epoch: node.epoch, attempt: 0, responders: Vec::new() });
            self.send_info_req(n);
        }
    }

    fn send_info_req(&mut self, n: NodeId) {
        self.enqueue(n, BROADCAST, Packet::control(n, PacketBody::InfoReq { requester: n }));
    }

    fn on_gather_end(&mut self, n: NodeId, epoch: u32) {
        let now = self.now_s();
        let (retries, staleness) = (self.cfg.routine.retries, self.cfg.routine.staleness);
        let node = &mut self.nodes[n as usize];
        let Some(g) = node.gather.as_mut().filter(|g| g.epoch == epoch) else { return };
        let responders = std::mem::take(&mut g.responders);
        let attempt = g.attempt;
        reconcile(&mut node.routing, &responders, now, staleness);
        let ids: Vec<String> = responders.iter().map(|r| format!("{}:{}", r.id, r.hc)).collect();
        let own = node.routing.my_gradient.map(|g| g.to_string()).unwrap_or_default();
        self.note(n, "GATHER", vec![("hc", own), ("attempt", attempt.to_string()), ("rsp", ids.join(","))]);
        let node = &mut self.nodes[n as usize];
        let g = node.gather.as_mut().expect("gathering");
        if responders.is_empty() && g.attempt < retries {
            g.attempt += 1;
            node.epoch += 1;
            g.epoch = node.epoch;
            self.send_info_req(n);
            return;
        }
        node.gather = None;
        let batch: Vec<Packet> = node.routine_buf.drain(..).collect();
        for pkt in batch {
            let node = &self.nodes[n as usize];
            match route_routine(&node.routing, pkt.hops, &pkt.trail, &responders, &self.cfg.routine) {
                RoutineDecision::Forward(nh) => self.enqueue(n, nh, pkt),
                RoutineDecision::NoResponders => self.lose(&pkt, LossCause::NoResponders),
                RoutineDecision::TtlExceeded => self.lose(&pkt, LossCause::Ttl),
            }
        }
    }

    // ---- synthetic traffic ----

    fn start_traffic(&mut self) {
        let spec = self.cfg.traffic.expect("traffic start without spec");
        let n = self.nodes.len();
        let candidates: Vec<NodeId> =
            (1..n as NodeId).filter(|&i| self.nodes[i as usize].routing.my_gradient.is_some()).collect();
        let k = spec.alert_sources.min(candidates.len());
        let mut sources: Vec<NodeId> =
            sample(&mut self.rng.traffic, candidates.len(), k).into_iter().map(|i| candidates[i]).collect();
        sources.sort_unstable();
        for &s in &sources {
            self.note(s, "ALERT_SOURCE", vec![]);
        }
        if spec.routine_rate > 0.0 {
            for i in 1..n as NodeId {
                let phase = self.rng.traffic.random_range(0.0..1.0 / spec.routine_rate);
                self.at(phase, Ev::Traffic { node: i, class: TrafficClass::Routine });
            }
        }
        if spec.alert_rate > 0.0 {
            for s in sources {
                let phase = self.rng.traffic.random_range(0.0..1.0 / spec.alert_rate);
                self.at(phase, Ev::Traffic { node: s, class: TrafficClass::Alert });
            }
        }
    }

    fn on_traffic(&mut self, n: NodeId, class: TrafficClass) {
        if self.now > self.traffic_stop {
            return;
        }
        let spec = self.cfg.traffic.expect("traffic without spec");
        let seq = self.nodes[n as usize].net_seq;
        let (payload, rate) = match class {
            TrafficClass::Alert => (
                Payload::Ale { level: SecurityLevel::D, cause: AlertCause::Temperature { value: 60.0 } },
                spec.alert_rate,
            ),
            _ => (Payload::Ina { value: 20.0, level: SecurityLevel::G }, spec.routine_rate),
        };
        self.originate(n, Message::new(n, SINK, seq, payload), true);
        self.at(1.0 / rate, Ev::Traffic { node: n, class });
    }

    // ---- application ----

    fn product_event(&mut self, n: NodeId, ev: ProductEvent) {
        let now = self.now_s();
        let node = &mut self.nodes[n as usize];
        if !node.alive {
            return;
        }
        let Some(p) = node.product.as_mut() else { return };
        let actions = p.step(ev, now);
        for a in actions {
            match a {
                ProductAction::Send(msg) => {
                    if msg.dst == SINK {
                        self.originate(n, msg, false);
                    } else {
                        let attrs = vec![("kind", msg.kind().name().to_owned()), ("to", peer(msg.dst))];
                        self.note(n, "SENT", attrs);
                        let dst = msg.dst;
                        self.enqueue(n, dst, Packet::local(msg));
                    }
                }
                ProductAction::Schedule { timer, at } => {
                    self.at(at - now, Ev::AppTimer { node: n, timer });
                }
                ProductAction::Note(note) => self.app_note(n, note),
            }
        }
    }

    fn app_note(&mut self, n: NodeId, note: AppNote) {
        match note {
            AppNote::Configured => {
                self.note(n, "CONFIGURED", vec![]);
                let node = &self.nodes[n as usize];
                let period = node.product.as_ref().and_then(|p| p.config.rules).map(|r| r.sample_period);
                if let (Some(period), false) = (period, node.samples.is_empty()) {
                    self.at(period, Ev::Sample(n));
                }
            }
            AppNote::Sample { value, v_max } => {
                self.note(n, "SAMPLE", vec![("value", format!("{value}")), ("vmax", format!("{v_max}"))]);
            }
            AppNote::Distance { neighbor, distance, level } => {
                let attrs =
                    vec![("peer", neighbor.to_string()), ("d", format!("{distance:.2}")), ("level", level_name(level))];
                self.note(n, "DISTANCE", attrs);
            }
            AppNote::Level { from, to } => {
                self.note(n, "LEVEL", vec![("from", level_name(from)), ("to", level_name(to))]);
            }
            AppNote::AleDeliveryFailed { seq } => self.note(n, "ALE_FAILED", vec![("seq", seq.to_string())]),
            AppNote::Violation { kind, phase } => {
                self.note(n, "VIOLATION", vec![("kind", kind.name().to_owned()), ("phase", format!("{phase:?}"))]);
            }
            AppNote::RuleError(e) => self.note(n, "RULE_ERROR", vec![("error", e.replace(' ', "_"))]),
        }
    }

    fn on_sample(&mut self, n: NodeId) {
        let node = &mut self.nodes[n as usize];
        if !node.alive || node.samples.is_empty() {
            return;
        }
        let value = node.samples[node.sample_idx.min(node.samples.len() - 1)];
        node.sample_idx += 1;
        let period = node.product.as_ref().and_then(|p| p.config.rules).map(|r| r.sample_period);
        self.product_event(n, ProductEvent::Sample(value));
        if let Some(period) = period {
            self.at(period, Ev::Sample(n));
        }
    }

    fn sink_event(&mut self, ev: SinkEvent) {
        let now = self.now_s();
        let Some(sink) = self.sink_app.as_mut() else { return };
        let actions = sink.step(ev, now);
        for a in actions {
            match a {
                SinkAction::Send(msg) => {
                    let attrs = vec![("kind", msg.kind().name().to_owned()), ("to", peer(msg.dst))];
                    self.note(SINK, "SENT", attrs);
                    match self.cfg.downlink {
                        Downlink::Ideal => {
                            let airtime = self.cfg.mac.airtime(Packet::local(msg.clone()).wire_len());
                            self.at_ns(airtime, Ev::Downlink(msg));
                        }
                        Downlink::Radio => {
                            let dst = msg.dst;
                            let mut pkt = Packet::local(msg);
                            pkt.class = TrafficClass::NetControl;
                            self.enqueue(SINK, dst, pkt);
                        }
                    }
                }
                SinkAction::Note(note) => match note {
                    SinkNote::Registered(p) => self.note(SINK, "REGISTERED", vec![("product", p.to_string())]),
                    SinkNote::Alert(a) => {
                        let attrs = vec![
                            ("product", a.product.to_string()),
                            ("seq", a.seq.to_string()),
                            ("level", level_name(a.level)),
                        ];
                        self.note(SINK, "ALERT", attrs);
                    }
                    SinkNote::QueryAnswered { product, query, after } => {
                        let attrs = vec![
                            ("product", product.to_string()),
                            ("query", format!("{query:?}")),
                            ("after", format!("{after:.6}")),
                        ];
                        self.note(SINK, "ANSWERED", attrs);
                    }
                    SinkNote::Unsolicited { product, kind } | SinkNote::Unexpected { product, kind } => {
                        let attrs = vec![("product", product.to_string()), ("kind", kind.name().to_owned())];
                        self.note(SINK, "UNEXPECTED", attrs);
                    }
                },
            }
        }
    }

    fn finish(mut self) -> TrialResult {
        for rec in &mut self.records {
            if rec.delivery.is_none() && rec.loss.is_none() {
                rec.loss = Some(LossCause::Undelivered);
            }
        }
        let end = self.end;
        let energy = self
            .nodes
            .iter_mut()
            .map(|n| {
                n.energy.advance(end);
                NodeEnergy {
                    consumed: n.energy.consumed(),
                    expected: n.energy.expected_consumption(),
                    remaining: n.energy.remaining(),
                }
            })
            .collect();
        let gradients = self.nodes.iter().map(|n| n.routing.my_gradient).collect();
        let products =
            self.nodes.iter_mut().enumerate().filter_map(|(i, n)| n.product.take().map(|p| (i as NodeId, p))).collect();
        TrialResult {
            records: self.records,
            trace: self.trace,
            alert_deliveries: self.deliveries,
            energy,
            gradients,
            sink_alerts: self.sink_app.map(|s| s.alert_log).unwrap_or_default(),
            products,
            stats: self.stats,
        }
    }
}
