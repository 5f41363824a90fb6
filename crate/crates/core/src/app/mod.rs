//! Application-layer protocol between active products and the control center.

pub mod message;
pub mod product;
pub mod sink;

pub use message::{AlertCause, CodecError, Message, MessageKind, Payload, RuleRecord, BROADCAST};
pub use product::{
    AppNote, Phase, ProductAction, ProductConfig, ProductEvent, ProductState, ProductTimer, ProtocolTimers, Ranging,
    RuleSet, SymbolSet,
};
pub use sink::{Provision, QueryKind, SinkAction, SinkEvent, SinkNote, SinkState};
