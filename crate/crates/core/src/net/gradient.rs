//! Hop-count gradient built by HELLO flooding from the sink.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::packet::Hello;
use crate::{NodeId, SINK};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEntry {
    pub id: NodeId,
    /// Neighbour's advertised hop count to the sink.
    pub hc: u8,
    /// Joules, last reported. Infinite for the sink.
    pub residual_energy: f64,
    pub last_seen: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingState {
    pub id: NodeId,
    pub my_gradient: Option<u8>,
    /// Latest gradient round seen.
    pub round: u16,
    pub neighbors: BTreeMap<NodeId, NeighborEntry>,
    /// (originator, sequence) of accepted alerts with their expiry time.
    pub accepted_alert_seqs: BTreeMap<(NodeId, u16), f64>,
}

fn newer(a: u16, b: u16) -> bool {
    (a.wrapping_sub(b) as i16) > 0
}

impl RoutingState {
    pub fn new(id: NodeId) -> Self {
        Self {
            id,
            my_gradient: if id == SINK { Some(0) } else { None },
            round: 0,
            neighbors: BTreeMap::new(),
            accepted_alert_seqs: BTreeMap::new(),
        }
    }

    pub fn is_sink(&self) -> bool {
        self.id == SINK
    }

    pub fn upsert_neighbor(&mut self, id: NodeId, hc: u8, energy: Option<f64>, now: f64) {
        let e = self.neighbors.entry(id).or_insert(NeighborEntry {
            id,
            hc,
            residual_energy: f64::NAN,
            last_seen: now,
        });
        e.hc = hc;
        e.last_seen = now;
        if let Some(j) = energy {
            e.residual_energy = j;
        }
    }

    /// Refresh `last_seen` for a neighbour overheard on the channel.
    pub fn touch(&mut self, id: NodeId, now: f64) {
        if let Some(e) = self.neighbors.get_mut(&id) {
            e.last_seen = now;
        }
    }

    /// Neighbours ordered by (hc, id), filtered by `keep`.
    pub fn ranked_neighbors(&self, mut keep: impl FnMut(&NeighborEntry) -> bool) -> Vec<NodeId> {
        let mut v: Vec<&NeighborEntry> = self.neighbors.values().filter(|e| keep(e)).collect();
        v.sort_by_key(|e| (e.hc, e.id));
        v.into_iter().map(|e| e.id).collect()
    }

    /// Lowest (hc, id) neighbour.
    pub fn preferred_neighbor(&self) -> Option<NodeId> {
        self.neighbors.values().min_by_key(|e| (e.hc, e.id)).map(|e| e.id)
    }
}

/// Sink side: open a new round and return the HELLO to broadcast.
pub fn start_gradient_round(sink: &mut RoutingState) -> Hello {
    debug_assert!(sink.is_sink());
    sink.round = sink.round.wrapping_add(1);
    sink.my_gradient = Some(0);
    Hello { round: sink.round, hc: 0, sa: sink.id }
}

/// Process a received HELLO. Returns the HELLO to rebroadcast, if any.
pub fn handle_hello(state: &mut RoutingState, hello: Hello, now: f64) -> Option<Hello> {
    if newer(state.round, hello.round) {
        // straggler from a finished round
        return None;
    }
    if newer(hello.round, state.round) {
        state.round = hello.round;
        if !state.is_sink() {
            state.my_gradient = None;
        }
    }
    state.upsert_neighbor(hello.sa, hello.hc, None, now);
    let offered = hello.hc.saturating_add(1);
    match state.my_gradient {
        Some(g) if g <= offered => None,
        _ => {
            state.my_gradient = Some(offered);
            Some(Hello { round: state.round, hc: offered, sa: state.id })
        }
    }
}

/// Lossless HELLO flood over a fixed graph with random per-link delays.
/// Node 0 is the sink. Returns every node's final gradient.
pub fn flood_gradients(adjacency: &[Vec<usize>], seed: u64) -> Vec<Option<u8>> {
    let n = adjacency.len();
    let mut states: Vec<RoutingState> = (0..n).map(|i| RoutingState::new(i as NodeId)).collect();
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (time in µs, insertion order, receiver, hello)
    let mut queue: BinaryHeap<Reverse<(u64, u64, usize, u16, u8, u16)>> = BinaryHeap::new();
    let mut order = 0u64;
    let mut broadcast = |queue: &mut BinaryHeap<_>, from: usize, h: Hello, now: u64, rng: &mut ChaCha8Rng| {
        for &to in &adjacency[from] {
            let at = now + rng.random_range(1..20_000u64);
            queue.push(Reverse((at, order, to, h.round, h.hc, h.sa)));
            order += 1;
        }
    };
    let h = start_gradient_round(&mut states[0]);
    broadcast(&mut queue, 0, h, 0, &mut rng);
    while let Some(Reverse((t, _, to, round, hc, sa))) = queue.pop() {
        let out = handle_hello(&mut states[to], Hello { round, hc, sa }, t as f64 * 1e-6);
        if let Some(h) = out {
            broadcast(&mut queue, to, h, t, &mut rng);
        }
    }
    states.into_iter().map(|s| s.my_gradient).collect()
}
