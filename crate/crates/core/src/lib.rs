//! Security supervision of chemical-product warehouses over a wireless sensor
//! network: rule engine, application protocol, QoS routing, the RRR baseline,
//! and a deterministic discrete-event simulator to compare them.

pub mod app;
pub mod metrics;
pub mod net;
pub mod num;
pub mod rrr;
pub mod rules;
pub mod scenario;
pub mod sim;

/// Node address. The sink is always node 0.
pub type NodeId = u16;

pub const SINK: NodeId = 0;

/// Scalar used by the simulator.
pub type Real = f64;

pub type StaticRuleConfig = rules::StaticRuleConfig<Real>;
pub type DynamicRuleConfig = rules::DynamicRuleConfig<Real>;
pub type DynamicRuleState = rules::DynamicRuleState<Real>;
pub type CommunityRuleConfig = rules::CommunityRuleConfig<Real>;
pub type PathLoss = sim::channel::PathLoss<Real>;

pub use rules::SecurityLevel;
