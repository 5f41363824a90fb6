//! Discrete-event network simulator.

pub mod channel;
pub mod engine;
pub mod energy;
pub mod event;
pub mod mac;
pub mod mobility;
pub mod record;
pub mod seed;
pub mod topology;
pub mod trace;
