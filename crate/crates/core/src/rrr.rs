//! Random Re-Routing baseline.
//!
//! While the locally observed alert rate stays at or below the threshold all
//! packets follow the preferred (lowest hop count) neighbour. Above it,
//! alerts keep the preferred path and routine packets are shunted to a
//! random neighbour that does not increase the hop count.

use std::collections::VecDeque;

use rand::Rng;

use crate::net::{Packet, RoutingState, TrafficClass};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrrConfig {
    /// Alert packets per second.
    pub threshold: f64,
    /// Rate estimation window, seconds.
    pub window: f64,
    pub ttl: u8,
}

impl Default for RrrConfig {
    fn default() -> Self {
        Self { threshold: 3.0, window: 5.0, ttl: 16 }
    }
}

/// Sliding-window packet rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimator {
    window: f64,
    times: VecDeque<f64>,
}

impl RateEstimator {
    pub fn new(window: f64) -> Self {
        assert!(window > 0.0, "window must be positive");
        Self { window, times: VecDeque::new() }
    }

    fn expire(&mut self, now: f64) {
        while self.times.front().is_some_and(|t| *t <= now - self.window) {
            self.times.pop_front();
        }
    }

    pub fn record(&mut self, now: f64) {
        self.expire(now);
        self.times.push_back(now);
    }

    /// Packets per second over `(now - window, now]`.
    pub fn rate(&mut self, now: f64) -> f64 {
        self.expire(now);
        self.times.len() as f64 / self.window
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrrState {
    pub cfg: RrrConfig,
    pub alert_rate: RateEstimator,
}

impl RrrState {
    pub fn new(cfg: RrrConfig) -> Self {
        Self { cfg, alert_rate: RateEstimator::new(cfg.window) }
    }

    pub fn shunting(&mut self, now: f64) -> bool {
        self.alert_rate.rate(now) > self.cfg.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrrDecision {
    Forward(NodeId),
    NoRoute,
    TtlExceeded,
}

/// Forwarding decision for `pkt` at this node. Alerts passing through are
/// counted towards the rate estimate.
pub fn rrr_route<R: Rng + ?Sized>(
    routing: &RoutingState,
    state: &mut RrrState,
    pkt: &Packet,
    now: f64,
    rng: &mut R,
) -> RrrDecision {
    if pkt.class == TrafficClass::Alert {
        state.alert_rate.record(now);
    }
    if pkt.hops >= state.cfg.ttl {
        return RrrDecision::TtlExceeded;
    }
    let own = routing.my_gradient.unwrap_or(u8::MAX);
    if pkt.class == TrafficClass::Routine && state.shunting(now) {
        let options: Vec<NodeId> = routing.neighbors.values().filter(|e| e.hc <= own).map(|e| e.id).collect();
        if options.is_empty() {
            return RrrDecision::NoRoute;
        }
        return RrrDecision::Forward(options[rng.random_range(0..options.len())]);
    }
    match routing.preferred_neighbor() {
        Some(n) => RrrDecision::Forward(n),
        None => RrrDecision::NoRoute,
    }
}
