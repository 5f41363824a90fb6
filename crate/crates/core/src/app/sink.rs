//! Control-center state machine.

use std::collections::{BTreeMap, BTreeSet};

use crate::app::message::{AlertCause, Message, MessageKind, Payload};
use crate::app::product::{RuleSet, SymbolSet};
use crate::rules::SecurityLevel;
use crate::{NodeId, SINK};

/// What the control center hands out to a product during configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Provision {
    pub symbols: SymbolSet,
    pub rules: RuleSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegistryEntry {
    pub registered: bool,
    pub configured: bool,
    pub level: SecurityLevel,
    pub ambient: Option<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlertRecord {
    pub time: f64,
    pub product: NodeId,
    pub seq: u16,
    pub level: SecurityLevel,
    pub cause: AlertCause,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum QueryKind {
    Config,
    Rules,
    Ambient,
}

impl QueryKind {
    fn request(self) -> Payload {
        match self {
            QueryKind::Config => Payload::Cmd2,
            QueryKind::Rules => Payload::Cmd4,
            QueryKind::Ambient => Payload::Cmd5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SinkEvent {
    Received(Message),
    Operator { query: QueryKind, target: NodeId },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SinkNote {
    Registered(NodeId),
    Alert(AlertRecord),
    QueryAnswered { product: NodeId, query: QueryKind, after: f64 },
    Unsolicited { product: NodeId, kind: MessageKind },
    Unexpected { product: NodeId, kind: MessageKind },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SinkAction {
    Send(Message),
    Note(SinkNote),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkState {
    pub registry: BTreeMap<NodeId, RegistryEntry>,
    pub alert_log: Vec<AlertRecord>,
    /// Outstanding operator queries and when they were issued.
    pub pending_queries: BTreeMap<(NodeId, QueryKind), f64>,
    provisions: BTreeMap<NodeId, Provision>,
    default_provision: Provision,
    seen_alerts: BTreeSet<(NodeId, u16)>,
    seq: u16,
    acks_sent: u64,
    ales_received: u64,
}

impl SinkState {
    pub fn new(default_provision: Provision) -> Self {
        Self {
            registry: BTreeMap::new(),
            alert_log: Vec::new(),
            pending_queries: BTreeMap::new(),
            provisions: BTreeMap::new(),
            default_provision,
            seen_alerts: BTreeSet::new(),
            seq: 0,
            acks_sent: 0,
            ales_received: 0,
        }
    }

    pub fn provision(&mut self, product: NodeId, p: Provision) {
        self.provisions.insert(product, p);
    }

    fn provision_for(&self, product: NodeId) -> &Provision {
        self.provisions.get(&product).unwrap_or(&self.default_provision)
    }

    /// (ALE messages received, ACKALE messages sent).
    pub fn ale_counters(&self) -> (u64, u64) {
        (self.ales_received, self.acks_sent)
    }

    fn msg(&mut self, dst: NodeId, payload: Payload) -> Message {
        self.seq = self.seq.wrapping_add(1);
        Message::new(SINK, dst, self.seq, payload)
    }

    pub fn step(&mut self, event: SinkEvent, now: f64) -> Vec<SinkAction> {
        let mut out = Vec::new();
        match event {
            SinkEvent::Operator { query, target } => {
                self.pending_queries.insert((target, query), now);
                let m = self.msg(target, query.request());
                out.push(SinkAction::Send(m));
            }
            SinkEvent::Received(msg) => self.on_message(msg, now, &mut out),
        }
        out
    }

    fn on_message(&mut self, msg: Message, now: f64, out: &mut Vec<SinkAction>) {
        let from = msg.src;
        let kind = msg.kind();
        match msg.payload {
            Payload::Ctr => {
                let entry = self.registry.entry(from).or_default();
                if !entry.registered {
                    entry.registered = true;
                    out.push(SinkAction::Note(SinkNote::Registered(from)));
                }
                let m = self.msg(from, Payload::AckCtr);
                out.push(SinkAction::Send(m));
            }
            Payload::Ncf0 | Payload::Ncf1 | Payload::Ncf2 => {
                let p = self.provision_for(from).clone();
                let entry = self.registry.entry(from).or_default();
                entry.registered = true;
                entry.configured = true;
                if matches!(kind, MessageKind::Ncf0 | MessageKind::Ncf2) {
                    let m = self.msg(
                        from,
                        Payload::Cmd1 { symbol: p.symbols.symbol.clone(), incompatible: p.symbols.incompatible.clone() },
                    );
                    out.push(SinkAction::Send(m));
                }
                if matches!(kind, MessageKind::Ncf0 | MessageKind::Ncf1) {
                    let m = self.msg(from, Payload::Cmd3(p.rules.to_record()));
                    out.push(SinkAction::Send(m));
                }
            }
            Payload::Ale { level, cause } => {
                self.ales_received += 1;
                if self.seen_alerts.insert((from, msg.seq)) {
                    let rec = AlertRecord { time: now, product: from, seq: msg.seq, level, cause };
                    self.alert_log.push(rec.clone());
                    self.registry.entry(from).or_default().level = level;
                    out.push(SinkAction::Note(SinkNote::Alert(rec)));
                }
                self.acks_sent += 1;
                let m = self.msg(from, Payload::AckAle { ale_seq: msg.seq });
                out.push(SinkAction::Send(m));
            }
            Payload::Cfg { .. } | Payload::Ser(_) | Payload::Ina { .. } => {
                let query = match kind {
                    MessageKind::Cfg => QueryKind::Config,
                    MessageKind::Ser => QueryKind::Rules,
                    _ => QueryKind::Ambient,
                };
                if let Payload::Ina { value, level } = msg.payload {
                    let entry = self.registry.entry(from).or_default();
                    entry.ambient = Some(value);
                    entry.level = level;
                }
                match self.pending_queries.remove(&(from, query)) {
                    Some(issued) => out.push(SinkAction::Note(SinkNote::QueryAnswered {
                        product: from,
                        query,
                        after: now - issued,
                    })),
                    None => out.push(SinkAction::Note(SinkNote::Unsolicited { product: from, kind })),
                }
            }
            _ => out.push(SinkAction::Note(SinkNote::Unexpected { product: from, kind })),
        }
    }
}
