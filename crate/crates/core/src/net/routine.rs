//! Energy-aware next-hop selection for routine packets.
//!
//! Each hop probes its neighbourhood (INFO_REQ), collects INFO_RSP replies
//! for a fixed window, refreshes its neighbour table from them and then picks
//! the next hop among the responders.

use super::gradient::RoutingState;
use super::packet::InfoRsp;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutineConfig {
    /// INFO_RSP collection window, seconds.
    pub window: f64,
    /// Extra gathering rounds when nobody answers.
    pub retries: u8,
    /// Table entries not heard for this long are evicted at reconciliation.
    pub staleness: f64,
    pub ttl: u8,
}

impl Default for RoutineConfig {
    fn default() -> Self {
        Self { window: 0.5, retries: 1, staleness: 30.0, ttl: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutineDecision {
    Forward(NodeId),
    NoResponders,
    TtlExceeded,
}

/// Pick the next hop among `responders`.
///
/// Candidates are responders whose hop count is at most `own_hc + 1`. The two
/// with the lowest hop count (ties by id) are compared: higher residual
/// energy wins, then lower hop count, then lower id.
pub fn select_next_hop(own_hc: u8, responders: &[InfoRsp]) -> Option<NodeId> {
    let mut cands: Vec<&InfoRsp> = responders.iter().filter(|r| r.hc <= own_hc.saturating_add(1)).collect();
    cands.sort_by_key(|r| (r.hc, r.id));
    cands.dedup_by_key(|r| r.id);
    let best_two = &cands[..cands.len().min(2)];
    best_two
        .iter()
        .min_by(|a, b| b.energy_mj.cmp(&a.energy_mj).then(a.hc.cmp(&b.hc)).then(a.id.cmp(&b.id)))
        .map(|r| r.id)
}

/// Routing decision for a routine packet that has travelled `hops` hops
/// through `trail`. Responders already on the trail are not considered.
pub fn route_routine(
    state: &RoutingState,
    hops: u8,
    trail: &[NodeId],
    responders: &[InfoRsp],
    cfg: &RoutineConfig,
) -> RoutineDecision {
    if hops >= cfg.ttl {
        return RoutineDecision::TtlExceeded;
    }
    let own = state.my_gradient.unwrap_or(u8::MAX);
    let fresh: Vec<InfoRsp> = responders.iter().filter(|r| !trail.contains(&r.id)).copied().collect();
    match select_next_hop(own, &fresh) {
        Some(n) => RoutineDecision::Forward(n),
        None => RoutineDecision::NoResponders,
    }
}

/// Fold a gathering epoch into the neighbour table: responders are added or
/// refreshed, absentees not heard within the staleness window are removed.
pub fn reconcile(state: &mut RoutingState, responders: &[InfoRsp], now: f64, staleness: f64) {
    for r in responders {
        let joules = if r.energy_mj == u32::MAX { f64::INFINITY } else { r.energy_mj as f64 / 1000.0 };
        state.upsert_neighbor(r.id, r.hc, Some(joules), now);
    }
    state.neighbors.retain(|id, e| responders.iter().any(|r| r.id == *id) || now - e.last_seen <= staleness);
}
