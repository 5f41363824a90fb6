//! Node-disjoint multipath forwarding for alert packets.
//!
//! Every copy of an alert `(originator, seq)` is accepted by at most one
//! intermediate node; later copies get an INUSE refusal and their sender
//! tries its next preferred neighbour.

use std::collections::BTreeSet;

use super::gradient::RoutingState;
use super::packet::Packet;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlertConfig {
    /// Number of copies sent by the source.
    pub copies: u8,
    /// Seconds an accepted `(originator, seq)` blocks further copies.
    pub inuse_lifetime: f64,
    /// Hop budget.
    pub ttl: u8,
}

impl Default for AlertConfig {
    fn default() -> Self {
        Self { copies: 2, inuse_lifetime: 10.0, ttl: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlertDecision {
    Forward(NodeId),
    AcceptAtSink,
    RejectInUse,
    DeadEnd,
}

/// Next hops for the source's copies: copy `j` goes to the `j`-th preferred
/// neighbour. Missing entries mean that copy has nowhere to go.
pub fn source_next_hops(state: &RoutingState, copies: usize) -> Vec<Option<NodeId>> {
    let ranked = state.ranked_neighbors(|_| true);
    (0..copies).map(|j| ranked.get(j).copied()).collect()
}

/// Best neighbour not on the packet's trail and not yet tried for it.
pub fn next_alert_hop(state: &RoutingState, pkt: &Packet, tried: &BTreeSet<NodeId>, cfg: &AlertConfig) -> Option<NodeId> {
    if pkt.hops >= cfg.ttl {
        return None;
    }
    state
        .ranked_neighbors(|e| e.id != pkt.origin && !pkt.trail.contains(&e.id) && !tried.contains(&e.id))
        .first()
        .copied()
}

/// Handle the first arrival of an alert copy at this node.
pub fn route_alert(
    state: &mut RoutingState,
    pkt: &Packet,
    now: f64,
    tried: &BTreeSet<NodeId>,
    cfg: &AlertConfig,
) -> AlertDecision {
    if state.is_sink() {
        return AlertDecision::AcceptAtSink;
    }
    state.accepted_alert_seqs.retain(|_, exp| *exp > now);
    let key = (pkt.origin, pkt.seq);
    if state.accepted_alert_seqs.contains_key(&key) {
        return AlertDecision::RejectInUse;
    }
    state.accepted_alert_seqs.insert(key, now + cfg.inuse_lifetime);
    match next_alert_hop(state, pkt, tried, cfg) {
        Some(n) => AlertDecision::Forward(n),
        None => AlertDecision::DeadEnd,
    }
}
