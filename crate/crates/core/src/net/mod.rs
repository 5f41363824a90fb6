//! Network layer: gradient setup, multipath alert routing and energy-aware
//! routine routing.

pub mod alert;
pub mod gradient;
pub mod packet;
pub mod routine;

pub use alert::{next_alert_hop, route_alert, source_next_hops, AlertConfig, AlertDecision};
pub use gradient::{flood_gradients, handle_hello, start_gradient_round, NeighborEntry, RoutingState};
pub use packet::{Hello, InfoRsp, Packet, PacketBody, PacketError, PacketKind, TrafficClass};
pub use routine::{reconcile, route_routine, select_next_hop, RoutineConfig, RoutineDecision};
