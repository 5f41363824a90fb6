use std::fmt;

use thiserror::Error;

use crate::app::message::{CodecError, Message, MessageKind};
use crate::NodeId;

/// Service class. Declaration order is the queueing priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrafficClass {
    Alert,
    NetControl,
    Routine,
}

impl TrafficClass {
    pub fn name(self) -> &'static str {
        match self {
            TrafficClass::Alert => "alert",
            TrafficClass::NetControl => "netcontrol",
            TrafficClass::Routine => "routine",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "alert" => Some(TrafficClass::Alert),
            "netcontrol" => Some(TrafficClass::NetControl),
            "routine" => Some(TrafficClass::Routine),
            _ => None,
        }
    }

    /// Alert for ALE messages, Routine for everything else.
    pub fn for_message(m: &Message) -> Self {
        if m.kind() == MessageKind::Ale {
            TrafficClass::Alert
        } else {
            TrafficClass::Routine
        }
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PacketKind {
    Hello = 1,
    InUse = 2,
    InfoReq = 3,
    InfoRsp = 4,
    Data = 5,
    /// One-hop application frame (GRE, RSI, downlink commands).
    Local = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hello {
    pub round: u16,
    pub hc: u8,
    pub sa: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InfoRsp {
    pub id: NodeId,
    pub hc: u8,
    /// Residual energy in millijoules, saturating.
    pub energy_mj: u32,
}

impl InfoRsp {
    pub fn energy_to_fixed(joules: f64) -> u32 {
        if joules.is_infinite() && joules > 0.0 {
            return u32::MAX;
        }
        (joules * 1000.0).round().clamp(0.0, u32::MAX as f64) as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PacketBody {
    Hello(Hello),
    InUse { originator: NodeId, seq: u16 },
    InfoReq { requester: NodeId },
    InfoRsp(InfoRsp),
    Data(Message),
    Local(Message),
}

impl PacketBody {
    pub fn kind(&self) -> PacketKind {
        match self {
            PacketBody::Hello(_) => PacketKind::Hello,
            PacketBody::InUse { .. } => PacketKind::InUse,
            PacketBody::InfoReq { .. } => PacketKind::InfoReq,
            PacketBody::InfoRsp(_) => PacketKind::InfoRsp,
            PacketBody::Data(_) => PacketKind::Data,
            PacketBody::Local(_) => PacketKind::Local,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("truncated packet")]
    Truncated,
    #[error("unknown packet kind {0}")]
    UnknownKind(u8),
    #[error("unknown traffic class {0}")]
    UnknownClass(u8),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error(transparent)]
    Message(#[from] CodecError),
}

/// Network-layer unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub class: TrafficClass,
    pub body: PacketBody,
    pub origin: NodeId,
    /// Originator sequence number.
    pub seq: u16,
    pub hops: u8,
    /// Copy index for multipath alerts, 0 otherwise.
    pub path_id: u8,
    /// Nodes traversed so far, origin first. Simulation metadata, not encoded.
    pub trail: Vec<NodeId>,
    /// Index of the simulator's packet record. Not encoded.
    pub tag: Option<u32>,
}

/// class, kind, origin, seq, hops, path id.
pub const PACKET_HEADER_LEN: usize = 8;

impl Packet {
    pub fn control(origin: NodeId, body: PacketBody) -> Self {
        Self { class: TrafficClass::NetControl, body, origin, seq: 0, hops: 0, path_id: 0, trail: Vec::new(), tag: None }
    }

    pub fn data(msg: Message, seq: u16) -> Self {
        let class = TrafficClass::for_message(&msg);
        let origin = msg.src;
        Self { class, body: PacketBody::Data(msg), origin, seq, hops: 0, path_id: 0, trail: vec![origin], tag: None }
    }

    pub fn local(msg: Message) -> Self {
        let origin = msg.src;
        Self {
            class: TrafficClass::Routine,
            body: PacketBody::Local(msg),
            origin,
            seq: 0,
            hops: 0,
            path_id: 0,
            trail: Vec::new(),
            tag: None,
        }
    }

    pub fn kind(&self) -> PacketKind {
        self.body.kind()
    }

    pub fn message(&self) -> Option<&Message> {
        match &self.body {
            PacketBody::Data(m) | PacketBody::Local(m) => Some(m),
            _ => None,
        }
    }

    pub fn wire_len(&self) -> usize {
        PACKET_HEADER_LEN
            + match &self.body {
                PacketBody::Hello(_) => 5,
                PacketBody::InUse { .. } => 4,
                PacketBody::InfoReq { .. } => 2,
                PacketBody::InfoRsp(_) => 7,
                PacketBody::Data(m) | PacketBody::Local(m) => m.wire_len(),
            }
    }

    pub fn encode(&self) -> Result<Vec<u8>, PacketError> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.push(self.class as u8);
        out.push(self.kind() as u8);
        out.extend_from_slice(&self.origin.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.push(self.hops);
        out.push(self.path_id);
        match &self.body {
            PacketBody::Hello(h) => {
                out.extend_from_slice(&h.round.to_be_bytes());
                out.push(h.hc);
                out.extend_from_slice(&h.sa.to_be_bytes());
            }
            PacketBody::InUse { originator, seq } => {
                out.extend_from_slice(&originator.to_be_bytes());
                out.extend_from_slice(&seq.to_be_bytes());
            }
            PacketBody::InfoReq { requester } => out.extend_from_slice(&requester.to_be_bytes()),
            PacketBody::InfoRsp(r) => {
                out.extend_from_slice(&r.id.to_be_bytes());
                out.push(r.hc);
                out.extend_from_slice(&r.energy_mj.to_be_bytes());
            }
            PacketBody::Data(m) | PacketBody::Local(m) => out.extend_from_slice(&m.encode()?),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PacketError> {
        if bytes.len() < PACKET_HEADER_LEN {
            return Err(PacketError::Truncated);
        }
        let class = match bytes[0] {
            0 => TrafficClass::Alert,
            1 => TrafficClass::NetControl,
            2 => TrafficClass::Routine,
            c => return Err(PacketError::UnknownClass(c)),
        };
        let u16_at = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
        let origin = u16_at(2);
        let seq = u16_at(4);
        let (hops, path_id) = (bytes[6], bytes[7]);
        let rest = &bytes[PACKET_HEADER_LEN..];
        let need = |n: usize| -> Result<(), PacketError> {
            match rest.len().cmp(&n) {
                std::cmp::Ordering::Less => Err(PacketError::Truncated),
                std::cmp::Ordering::Greater => Err(PacketError::Trailing(rest.len() - n)),
                std::cmp::Ordering::Equal => Ok(()),
            }
        };
        let r16 = |i: usize| u16::from_be_bytes([rest[i], rest[i + 1]]);
        let body = match bytes[1] {
            1 => {
                need(5)?;
                PacketBody::Hello(Hello { round: r16(0), hc: rest[2], sa: r16(3) })
            }
            2 => {
                need(4)?;
                PacketBody::InUse { originator: r16(0), seq: r16(2) }
            }
            3 => {
                need(2)?;
                PacketBody::InfoReq { requester: r16(0) }
            }
            4 => {
                need(7)?;
                let energy_mj = u32::from_be_bytes([rest[3], rest[4], rest[5], rest[6]]);
                PacketBody::InfoRsp(InfoRsp { id: r16(0), hc: rest[2], energy_mj })
            }
            5 => PacketBody::Data(Message::decode(rest)?),
            6 => PacketBody::Local(Message::decode(rest)?),
            k => return Err(PacketError::UnknownKind(k)),
        };
        Ok(Self { class, body, origin, seq, hops, path_id, trail: Vec::new(), tag: None })
    }
}
