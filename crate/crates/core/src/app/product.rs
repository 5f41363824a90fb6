//! Active-product state machine: registration, configuration, supervision
//! and alert announcement.

use std::collections::BTreeMap;

use crate::app::message::{AlertCause, Message, MessageKind, Payload, RuleRecord, BROADCAST};
use crate::rules::{
    combine_global, eval_community, eval_static, update_dynamic, CompatibilityMatrix, RuleError,
    SecurityLevel,
};
use crate::sim::channel::PathLoss;
use crate::{CommunityRuleConfig, DynamicRuleConfig, DynamicRuleState, NodeId, StaticRuleConfig, SINK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Unregistered,
    AwaitingAck,
    AwaitingConfig,
    Supervising,
}

/// Retransmission policy for the uplink handshakes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolTimers {
    /// CTR and NCF retransmission period, seconds.
    pub handshake_retry: f64,
    /// ALE retransmission period, seconds.
    pub ale_retry: f64,
    pub ale_max_attempts: u32,
}

impl Default for ProtocolTimers {
    fn default() -> Self {
        Self { handshake_retry: 2.0, ale_retry: 0.5, ale_max_attempts: 10 }
    }
}

/// Static, dynamic and community parameters plus supervision periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleSet {
    pub static_cfg: StaticRuleConfig,
    pub dynamic_cfg: DynamicRuleConfig,
    pub d_min: f64,
    pub delta_d: f64,
    pub gre_period: f64,
    pub sample_period: f64,
}

impl RuleSet {
    pub fn to_record(&self) -> RuleRecord {
        RuleRecord {
            v_min: self.static_cfg.v_min as f32,
            v_max: self.static_cfg.v_max as f32,
            delta_v: self.static_cfg.delta_v as f32,
            t_cr: self.dynamic_cfg.t_cr as f32,
            n_c: self.dynamic_cfg.n_c.min(u16::MAX as u32) as u16,
            d_min: self.d_min as f32,
            delta_d: self.delta_d as f32,
            gre_period: self.gre_period as f32,
            sample_period: self.sample_period as f32,
        }
    }

    pub fn from_record(r: &RuleRecord) -> Result<Self, RuleError> {
        let set = Self {
            static_cfg: StaticRuleConfig::new(r.v_min as f64, r.v_max as f64, r.delta_v as f64)?,
            dynamic_cfg: DynamicRuleConfig::new(r.t_cr as f64, r.n_c as u32)?,
            d_min: r.d_min as f64,
            delta_d: r.delta_d as f64,
            gre_period: r.gre_period as f64,
            sample_period: r.sample_period as f64,
        };
        if !(set.gre_period > 0.0 && set.sample_period > 0.0) {
            return Err(RuleError::InvalidConfig("periods must be > 0".into()));
        }
        CommunityRuleConfig::new(set.d_min, set.delta_d, CompatibilityMatrix::new())?;
        Ok(set)
    }
}

/// Product-side symbol assignment: own symbol and the symbols it must keep
/// away from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolSet {
    pub symbol: String,
    pub incompatible: Vec<String>,
}

/// Converts an RSSI reading back to distance through the mean path-loss model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranging {
    pub path_loss: PathLoss<f64>,
    pub tx_power_dbm: f64,
}

impl Ranging {
    pub fn rssi_to_distance(&self, rssi_dbm: f64) -> f64 {
        self.path_loss.rssi_to_distance(self.tx_power_dbm, rssi_dbm)
    }
}

impl Default for Ranging {
    fn default() -> Self {
        Self { path_loss: PathLoss::default(), tx_power_dbm: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductConfig {
    pub id: NodeId,
    pub symbols: Option<SymbolSet>,
    pub rules: Option<RuleSet>,
    pub ranging: Ranging,
    pub timers: ProtocolTimers,
}

impl ProductConfig {
    pub fn has_symbols(&self) -> bool {
        self.symbols.is_some()
    }

    pub fn has_rules(&self) -> bool {
        self.rules.is_some()
    }

    pub fn is_complete(&self) -> bool {
        self.has_symbols() && self.has_rules()
    }

    /// NCF variant announcing what is missing, `None` when nothing is.
    pub fn ncf_kind(&self) -> Option<MessageKind> {
        match (self.has_symbols(), self.has_rules()) {
            (false, false) => Some(MessageKind::Ncf0),
            (true, false) => Some(MessageKind::Ncf1),
            (false, true) => Some(MessageKind::Ncf2),
            (true, true) => None,
        }
    }

    fn community_cfg(&self) -> Option<CommunityRuleConfig> {
        let (syms, rules) = (self.symbols.as_ref()?, self.rules.as_ref()?);
        let mut matrix = CompatibilityMatrix::new();
        matrix.declare(&syms.symbol);
        for other in &syms.incompatible {
            matrix.set(&syms.symbol, other, crate::rules::Compatibility::Incompatible);
        }
        CommunityRuleConfig::new(rules.d_min, rules.delta_d, matrix).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductTimer {
    Handshake(u32),
    Gre(u32),
    Ale(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProductEvent {
    /// Node boot.
    Start,
    Received { msg: Message, rssi_dbm: Option<f64> },
    Timer(ProductTimer),
    Sample(f64),
}

/// Loggable application-level occurrences.
#[derive(Debug, Clone, PartialEq)]
pub enum AppNote {
    Configured,
    Sample { value: f64, v_max: f64 },
    Distance { neighbor: NodeId, distance: f64, level: SecurityLevel },
    Level { from: SecurityLevel, to: SecurityLevel },
    AleDeliveryFailed { seq: u16 },
    Violation { kind: MessageKind, phase: Phase },
    RuleError(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProductAction {
    Send(Message),
    Schedule { timer: ProductTimer, at: f64 },
    Note(AppNote),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborObservation {
    pub symbol: String,
    pub level: SecurityLevel,
    pub distance: Option<f64>,
    pub heard_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingAle {
    pub msg: Message,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductState {
    pub phase: Phase,
    pub config: ProductConfig,
    pub rule_state: DynamicRuleState,
    pub neighbor_levels: BTreeMap<NodeId, NeighborObservation>,
    pub pending_ale: Option<PendingAle>,
    pub static_level: SecurityLevel,
    pub dynamic_level: SecurityLevel,
    pub global_level: SecurityLevel,
    pub last_sample: Option<f64>,
    seq: u16,
    handshake_gen: u32,
    gre_gen: u32,
    ale_gen: u32,
}

impl ProductState {
    pub fn new(config: ProductConfig) -> Self {
        Self {
            phase: Phase::Unregistered,
            config,
            rule_state: DynamicRuleState::new(),
            neighbor_levels: BTreeMap::new(),
            pending_ale: None,
            static_level: SecurityLevel::G,
            dynamic_level: SecurityLevel::G,
            global_level: SecurityLevel::G,
            last_sample: None,
            seq: 0,
            handshake_gen: 0,
            gre_gen: 0,
            ale_gen: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.config.id
    }

    fn next_seq(&mut self) -> u16 {
        self.seq = self.seq.wrapping_add(1);
        self.seq
    }

    fn msg(&mut self, dst: NodeId, payload: Payload) -> Message {
        let seq = self.next_seq();
        Message::new(self.config.id, dst, seq, payload)
    }

    fn symbol(&self) -> &str {
        self.config.symbols.as_ref().map(|s| s.symbol.as_str()).unwrap_or("")
    }

    /// Advance the state machine by one event at time `now`.
    pub fn step(&mut self, event: ProductEvent, now: f64) -> Vec<ProductAction> {
        let mut out = Vec::new();
        match event {
            ProductEvent::Start => {
                if self.phase == Phase::Unregistered {
                    self.phase = Phase::AwaitingAck;
                    self.send_handshake(now, &mut out);
                }
            }
            ProductEvent::Timer(ProductTimer::Handshake(gen)) => {
                if gen == self.handshake_gen
                    && matches!(self.phase, Phase::AwaitingAck | Phase::AwaitingConfig)
                {
                    self.send_handshake(now, &mut out);
                }
            }
            ProductEvent::Timer(ProductTimer::Gre(gen)) => {
                if gen == self.gre_gen && self.phase == Phase::Supervising {
                    let payload = Payload::Gre { symbol: self.symbol().to_owned(), level: self.global_level };
                    let m = self.msg(BROADCAST, payload);
                    out.push(ProductAction::Send(m));
                    let period = self.config.rules.map(|r| r.gre_period).unwrap_or(1.0);
                    out.push(ProductAction::Schedule { timer: ProductTimer::Gre(gen), at: now + period });
                }
            }
            ProductEvent::Timer(ProductTimer::Ale(gen)) => {
                if gen == self.ale_gen {
                    self.retry_ale(now, &mut out);
                }
            }
            ProductEvent::Sample(value) => self.on_sample(value, now, &mut out),
            ProductEvent::Received { msg, rssi_dbm } => self.on_message(msg, rssi_dbm, now, &mut out),
        }
        out
    }

    fn send_handshake(&mut self, now: f64, out: &mut Vec<ProductAction>) {
        let payload = match self.phase {
            Phase::AwaitingAck => Payload::Ctr,
            Phase::AwaitingConfig => match self.config.ncf_kind() {
                Some(MessageKind::Ncf0) => Payload::Ncf0,
                Some(MessageKind::Ncf1) => Payload::Ncf1,
                Some(_) => Payload::Ncf2,
                None => return,
            },
            _ => return,
        };
        let m = self.msg(SINK, payload);
        out.push(ProductAction::Send(m));
        out.push(ProductAction::Schedule {
            timer: ProductTimer::Handshake(self.handshake_gen),
            at: now + self.config.timers.handshake_retry,
        });
    }

    fn enter_supervising(&mut self, now: f64, out: &mut Vec<ProductAction>) {
        self.phase = Phase::Supervising;
        self.handshake_gen += 1;
        self.gre_gen += 1;
        out.push(ProductAction::Note(AppNote::Configured));
        if let Some(rules) = self.config.rules {
            out.push(ProductAction::Schedule { timer: ProductTimer::Gre(self.gre_gen), at: now + rules.gre_period });
        }
    }

    fn violation(&self, kind: MessageKind, out: &mut Vec<ProductAction>) {
        out.push(ProductAction::Note(AppNote::Violation { kind, phase: self.phase }));
    }

    fn on_message(&mut self, msg: Message, rssi_dbm: Option<f64>, now: f64, out: &mut Vec<ProductAction>) {
        let kind = msg.kind();
        match msg.payload {
            Payload::AckCtr => match self.phase {
                Phase::AwaitingAck => {
                    self.phase = Phase::AwaitingConfig;
                    self.handshake_gen += 1;
                    if self.config.is_complete() {
                        self.enter_supervising(now, out);
                    } else {
                        self.send_handshake(now, out);
                    }
                }
                Phase::Unregistered => self.violation(kind, out),
                // duplicate acknowledgement
                _ => {}
            },
            Payload::Cmd1 { symbol, incompatible } => {
                if matches!(self.phase, Phase::Unregistered | Phase::AwaitingAck) {
                    return self.violation(kind, out);
                }
                self.config.symbols = Some(SymbolSet { symbol, incompatible });
                if self.phase == Phase::AwaitingConfig && self.config.is_complete() {
                    self.enter_supervising(now, out);
                }
            }
            Payload::Cmd3(record) => {
                if matches!(self.phase, Phase::Unregistered | Phase::AwaitingAck) {
                    return self.violation(kind, out);
                }
                match RuleSet::from_record(&record) {
                    Ok(rules) => {
                        self.config.rules = Some(rules);
                        // new rules clear the latched dynamic state
                        self.rule_state.reset();
                        if self.phase == Phase::AwaitingConfig && self.config.is_complete() {
                            self.enter_supervising(now, out);
                        }
                    }
                    Err(e) => out.push(ProductAction::Note(AppNote::RuleError(e.to_string()))),
                }
            }
            Payload::Cmd2 | Payload::Cmd4 | Payload::Cmd5 => {
                if self.phase != Phase::Supervising {
                    return self.violation(kind, out);
                }
                let rules = self.config.rules.expect("supervising implies rules");
                let reply = match kind {
                    MessageKind::Cmd2 => Payload::Cfg {
                        symbol: self.symbol().to_owned(),
                        gre_period: rules.gre_period as f32,
                        sample_period: rules.sample_period as f32,
                    },
                    MessageKind::Cmd4 => Payload::Ser(rules.to_record()),
                    _ => Payload::Ina {
                        value: self.last_sample.unwrap_or(f64::NAN) as f32,
                        level: self.global_level,
                    },
                };
                let m = self.msg(SINK, reply);
                out.push(ProductAction::Send(m));
            }
            Payload::Gre { symbol, .. } => {
                if self.phase != Phase::Supervising || msg.src == self.config.id {
                    return;
                }
                let prev = self.neighbor_levels.get(&msg.src);
                let obs = NeighborObservation {
                    symbol,
                    level: prev.map(|p| p.level).unwrap_or(SecurityLevel::G),
                    distance: prev.and_then(|p| p.distance),
                    heard_at: prev.map(|p| p.heard_at).unwrap_or(now),
                };
                self.neighbor_levels.insert(msg.src, obs);
                let payload = Payload::Rsi {
                    symbol: self.symbol().to_owned(),
                    level: self.global_level,
                    gre_rssi: rssi_dbm.unwrap_or(f64::NAN) as f32,
                };
                let m = self.msg(msg.src, payload);
                out.push(ProductAction::Send(m));
            }
            Payload::Rsi { symbol, .. } => {
                if self.phase != Phase::Supervising {
                    return;
                }
                let Some(rssi) = rssi_dbm else { return };
                self.on_rsi(msg.src, symbol, rssi, now, out);
            }
            Payload::AckAle { ale_seq } => {
                if self.pending_ale.as_ref().is_some_and(|p| p.msg.seq == ale_seq) {
                    self.pending_ale = None;
                    self.ale_gen += 1;
                }
            }
            _ => self.violation(kind, out),
        }
    }

    fn on_rsi(&mut self, from: NodeId, symbol: String, rssi: f64, now: f64, out: &mut Vec<ProductAction>) {
        let Some(mut community) = self.config.community_cfg() else { return };
        let distance = self.config.ranging.rssi_to_distance(rssi);
        community.matrix.declare(&symbol);
        let level = match eval_community(self.symbol(), &symbol, distance, &community) {
            Ok(l) => l,
            Err(e) => {
                out.push(ProductAction::Note(AppNote::RuleError(e.to_string())));
                return;
            }
        };
        out.push(ProductAction::Note(AppNote::Distance { neighbor: from, distance, level }));
        self.neighbor_levels
            .insert(from, NeighborObservation { symbol, level, distance: Some(distance), heard_at: now });
        let cause = AlertCause::Proximity { neighbor: from, distance: distance as f32 };
        self.reevaluate(now, cause, out);
    }

    fn on_sample(&mut self, value: f64, now: f64, out: &mut Vec<ProductAction>) {
        self.last_sample = Some(value);
        if self.phase != Phase::Supervising {
            return;
        }
        let rules = self.config.rules.expect("supervising implies rules");
        out.push(ProductAction::Note(AppNote::Sample { value, v_max: rules.static_cfg.v_max }));
        let s_sr = match eval_static(value, &rules.static_cfg) {
            Ok(l) => l,
            Err(e) => {
                out.push(ProductAction::Note(AppNote::RuleError(e.to_string())));
                return;
            }
        };
        let (state, s_dr) = update_dynamic(&self.rule_state, s_sr, now, &rules.dynamic_cfg);
        self.rule_state = state;
        self.static_level = s_sr;
        self.dynamic_level = s_dr;
        self.reevaluate(now, AlertCause::Temperature { value: value as f32 }, out);
    }

    /// Worst community level among neighbours heard recently.
    pub fn community_level(&self, now: f64) -> SecurityLevel {
        let window = self.config.rules.map(|r| 3.0 * r.gre_period).unwrap_or(f64::INFINITY);
        self.neighbor_levels
            .values()
            .filter(|o| now - o.heard_at <= window)
            .map(|o| o.level)
            .max()
            .unwrap_or(SecurityLevel::G)
    }

    fn reevaluate(&mut self, now: f64, cause: AlertCause, out: &mut Vec<ProductAction>) {
        let levels = [self.static_level, self.dynamic_level, self.community_level(now)];
        let global = combine_global(&levels).expect("non-empty");
        let prev = self.global_level;
        if global == prev {
            return;
        }
        self.global_level = global;
        out.push(ProductAction::Note(AppNote::Level { from: prev, to: global }));
        if global > prev {
            assert!(global >= SecurityLevel::B, "ALE only for B or D");
            let m = self.msg(SINK, Payload::Ale { level: global, cause });
            self.ale_gen += 1;
            self.pending_ale = Some(PendingAle { msg: m.clone(), attempts: 1 });
            out.push(ProductAction::Send(m));
            out.push(ProductAction::Schedule {
                timer: ProductTimer::Ale(self.ale_gen),
                at: now + self.config.timers.ale_retry,
            });
        }
    }

    fn retry_ale(&mut self, now: f64, out: &mut Vec<ProductAction>) {
        let max = self.config.timers.ale_max_attempts;
        let Some(pending) = self.pending_ale.as_mut() else { return };
        if pending.attempts >= max {
            let seq = pending.msg.seq;
            self.pending_ale = None;
            out.push(ProductAction::Note(AppNote::AleDeliveryFailed { seq }));
            return;
        }
        pending.attempts += 1;
        out.push(ProductAction::Send(pending.msg.clone()));
        out.push(ProductAction::Schedule {
            timer: ProductTimer::Ale(self.ale_gen),
            at: now + self.config.timers.ale_retry,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rules(v_max: f64, dv: f64) -> RuleSet {
        RuleSet {
            static_cfg: StaticRuleConfig::new(0.0, v_max, dv).unwrap(),
            dynamic_cfg: DynamicRuleConfig::new(30.0, 3).unwrap(),
            d_min: 5.0,
            delta_d: 3.0,
            gre_period: 10.0,
            sample_period: 5.0,
        }
    }

    fn config(id: NodeId, symbols: Option<&str>, rules: Option<RuleSet>) -> ProductConfig {
        ProductConfig {
            id,
            symbols: symbols.map(|s| SymbolSet {
                symbol: s.to_owned(),
                incompatible: if s == "H2SO4" { vec!["HF".into()] } else { vec!["H2SO4".into()] },
            }),
            rules,
            ranging: Ranging::default(),
            timers: ProtocolTimers::default(),
        }
    }

    fn sent(actions: &[ProductAction]) -> Vec<MessageKind> {
        actions
            .iter()
            .filter_map(|a| match a {
                ProductAction::Send(m) => Some(m.kind()),
                _ => None,
            })
            .collect()
    }

    fn recv(msg: Message) -> ProductEvent {
        ProductEvent::Received { msg, rssi_dbm: None }
    }

    fn supervising(id: NodeId, symbol: &str, r: RuleSet) -> ProductState {
        let mut p = ProductState::new(config(id, Some(symbol), Some(r)));
        p.step(ProductEvent::Start, 0.0);
        let acts = p.step(recv(Message::new(SINK, id, 1, Payload::AckCtr)), 0.1);
        assert!(acts.contains(&ProductAction::Note(AppNote::Configured)));
        assert_eq!(p.phase, Phase::Supervising);
        p
    }

    #[test]
    fn registration_then_ncf2_then_cmd1() {
        let mut p = ProductState::new(config(1, None, Some(rules(14.0, 0.0))));
        let a = p.step(ProductEvent::Start, 0.05);
        assert_eq!(sent(&a), vec![MessageKind::Ctr]);
        assert_eq!(p.phase, Phase::AwaitingAck);
        // retransmit on timer
        let a = p.step(ProductEvent::Timer(ProductTimer::Handshake(0)), 2.05);
        assert_eq!(sent(&a), vec![MessageKind::Ctr]);
        let a = p.step(recv(Message::new(SINK, 1, 1, Payload::AckCtr)), 2.1);
        assert_eq!(sent(&a), vec![MessageKind::Ncf2]);
        assert_eq!(p.phase, Phase::AwaitingConfig);
        // stale CTR timer ignored, new NCF timer retransmits
        assert!(p.step(ProductEvent::Timer(ProductTimer::Handshake(0)), 4.05).is_empty());
        let a = p.step(ProductEvent::Timer(ProductTimer::Handshake(1)), 4.1);
        assert_eq!(sent(&a), vec![MessageKind::Ncf2]);
        let a = p.step(
            recv(Message::new(SINK, 1, 2, Payload::Cmd1 { symbol: "HF".into(), incompatible: vec![] })),
            4.2,
        );
        assert!(a.contains(&ProductAction::Note(AppNote::Configured)));
        assert_eq!(p.phase, Phase::Supervising);
        assert!(matches!(
            a.last(),
            Some(ProductAction::Schedule { timer: ProductTimer::Gre(_), at }) if (*at - 14.2).abs() < 1e-12
        ));
    }

    #[test]
    fn ncf_variant_tracks_preinstalled_parts() {
        assert_eq!(config(1, None, None).ncf_kind(), Some(MessageKind::Ncf0));
        assert_eq!(config(1, Some("HF"), None).ncf_kind(), Some(MessageKind::Ncf1));
        assert_eq!(config(1, None, Some(rules(14.0, 0.0))).ncf_kind(), Some(MessageKind::Ncf2));
        assert_eq!(config(1, Some("HF"), Some(rules(14.0, 0.0))).ncf_kind(), None);
    }

    #[test]
    fn ncf0_needs_both_commands() {
        let mut p = ProductState::new(config(2, None, None));
        p.step(ProductEvent::Start, 0.0);
        assert_eq!(sent(&p.step(recv(Message::new(SINK, 2, 1, Payload::AckCtr)), 0.1)), vec![MessageKind::Ncf0]);
        let a = p.step(recv(Message::new(SINK, 2, 2, Payload::Cmd1 { symbol: "HF".into(), incompatible: vec![] })), 0.2);
        assert!(a.is_empty());
        assert_eq!(p.phase, Phase::AwaitingConfig);
        let a = p.step(recv(Message::new(SINK, 2, 3, Payload::Cmd3(rules(14.0, 0.0).to_record()))), 0.3);
        assert!(a.contains(&ProductAction::Note(AppNote::Configured)));
    }

    #[test]
    fn duplicate_acks_are_idempotent() {
        let mut p = supervising(3, "HF", rules(14.0, 0.0));
        let before = p.clone();
        assert!(p.step(recv(Message::new(SINK, 3, 9, Payload::AckCtr)), 1.0).is_empty());
        assert!(p.step(recv(Message::new(SINK, 3, 9, Payload::AckAle { ale_seq: 77 })), 1.0).is_empty());
        assert_eq!(p, before);
    }

    #[test]
    fn temperature_ramp_alerts_exactly_at_fifteen() {
        let mut p = supervising(3, "HF", rules(14.0, 0.0));
        let mut ale_at = Vec::new();
        for (i, v) in [7.0, 9.0, 11.0, 13.0, 15.0].into_iter().enumerate() {
            let a = p.step(ProductEvent::Sample(v), 10.0 + i as f64);
            if sent(&a).contains(&MessageKind::Ale) {
                ale_at.push(v);
            }
        }
        assert_eq!(ale_at, vec![15.0]);
        let pending = p.pending_ale.clone().unwrap();
        assert!(matches!(pending.msg.payload, Payload::Ale { level: SecurityLevel::D, .. }));
        // retransmit until acknowledged
        let a = p.step(ProductEvent::Timer(ProductTimer::Ale(p.ale_gen)), 14.5);
        assert_eq!(sent(&a), vec![MessageKind::Ale]);
        let a = p.step(recv(Message::new(SINK, 3, 5, Payload::AckAle { ale_seq: pending.msg.seq })), 14.6);
        assert!(a.is_empty());
        assert!(p.pending_ale.is_none());
        assert!(p.step(ProductEvent::Timer(ProductTimer::Ale(p.ale_gen - 1)), 15.0).is_empty());
    }

    #[test]
    fn ale_gives_up_after_max_attempts() {
        let mut p = supervising(3, "HF", rules(14.0, 0.0));
        p.step(ProductEvent::Sample(20.0), 1.0);
        let gen = p.ale_gen;
        let mut sends = 1;
        let mut failed = false;
        for k in 0..20 {
            let a = p.step(ProductEvent::Timer(ProductTimer::Ale(gen)), 1.5 + k as f64 * 0.5);
            sends += sent(&a).len();
            if a.iter().any(|x| matches!(x, ProductAction::Note(AppNote::AleDeliveryFailed { .. }))) {
                failed = true;
                break;
            }
        }
        assert!(failed);
        assert_eq!(sends, 10);
    }

    #[test]
    fn only_upward_transitions_alert() {
        let mut p = supervising(3, "HF", rules(14.0, 1.0));
        let mut alerts = Vec::new();
        for (t, v) in [(1.0, 13.5), (2.0, 15.0), (3.0, 13.5), (4.0, 7.0), (5.0, 13.5)] {
            let a = p.step(ProductEvent::Sample(v), t);
            for act in a {
                if let ProductAction::Send(Message { payload: Payload::Ale { level, .. }, .. }) = act {
                    alerts.push(level);
                }
            }
        }
        // D->B is not a good-to-bad switch, so n_c = 3 is never reached
        assert_eq!(alerts, vec![SecurityLevel::B, SecurityLevel::D, SecurityLevel::B]);
    }

    #[test]
    fn gre_period_is_exact() {
        let mut p = supervising(3, "HF", rules(14.0, 0.0));
        let mut at = 10.1;
        let mut times = Vec::new();
        for _ in 0..4 {
            let a = p.step(ProductEvent::Timer(ProductTimer::Gre(p.gre_gen)), at);
            assert_eq!(sent(&a), vec![MessageKind::Gre]);
            times.push(at);
            at = match a.last() {
                Some(ProductAction::Schedule { at, .. }) => *at,
                other => panic!("{other:?}"),
            };
        }
        for w in times.windows(2) {
            assert!((w[1] - w[0] - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gre_gets_rsi_and_close_rsi_raises_alert() {
        let mut a = supervising(6, "H2SO4", rules(40.0, 1.0));
        let gre = Message::new(3, BROADCAST, 4, Payload::Gre { symbol: "HF".into(), level: SecurityLevel::G });
        let acts = a.step(ProductEvent::Received { msg: gre, rssi_dbm: Some(-70.0) }, 20.0);
        assert_eq!(sent(&acts), vec![MessageKind::Rsi]);

        let mut b = supervising(3, "HF", rules(40.0, 1.0));
        let ranging = b.config.ranging;
        let rssi_at = |d: f64| ranging.path_loss.mean_rx_power(ranging.tx_power_dbm, d);
        let rsi = |d: f64| ProductEvent::Received {
            msg: Message::new(
                6,
                3,
                1,
                Payload::Rsi { symbol: "H2SO4".into(), level: SecurityLevel::G, gre_rssi: -70.0 },
            ),
            rssi_dbm: Some(rssi_at(d)),
        };
        assert!(sent(&b.step(rsi(12.0), 21.0)).is_empty());
        assert_eq!(sent(&b.step(rsi(7.0), 22.0)), vec![MessageKind::Ale]);
        assert_eq!(b.global_level, SecurityLevel::B);
        assert_eq!(sent(&b.step(rsi(3.0), 23.0)), vec![MessageKind::Ale]);
        assert_eq!(b.global_level, SecurityLevel::D);
    }

    #[test]
    fn queries_answered_only_when_supervising() {
        let mut p = ProductState::new(config(4, Some("HF"), Some(rules(14.0, 0.0))));
        let a = p.step(recv(Message::new(SINK, 4, 1, Payload::Cmd4)), 0.0);
        assert!(matches!(a[..], [ProductAction::Note(AppNote::Violation { kind: MessageKind::Cmd4, phase: Phase::Unregistered })]));
        let mut p = supervising(4, "HF", rules(14.0, 0.0));
        p.step(ProductEvent::Sample(9.0), 1.0);
        for (cmd, reply) in [
            (Payload::Cmd2, MessageKind::Cfg),
            (Payload::Cmd4, MessageKind::Ser),
            (Payload::Cmd5, MessageKind::Ina),
        ] {
            let a = p.step(recv(Message::new(SINK, 4, 1, cmd)), 2.0);
            assert_eq!(sent(&a), vec![reply]);
        }
    }
}
