//! Application messages and their simulated wire layout.
//!
//! Header: kind tag (1 byte), source (2), destination (2, `0xFFFF` is
//! broadcast), sequence (2), all big-endian, followed by at most
//! [`MAX_PAYLOAD`] bytes of kind-specific payload.

use std::fmt;

use thiserror::Error;

use crate::rules::SecurityLevel;
use crate::NodeId;

pub const BROADCAST: NodeId = 0xFFFF;
pub const HEADER_LEN: usize = 7;
pub const MAX_PAYLOAD: usize = 100;
pub const MAX_SYMBOL_LEN: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte budget")]
    PayloadTooLarge(usize),
    #[error("symbol `{0}` longer than {MAX_SYMBOL_LEN} bytes")]
    SymbolTooLong(String),
    #[error("frame truncated")]
    Truncated,
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("invalid field: {0}")]
    InvalidField(&'static str),
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Ctr = 1,
    AckCtr,
    Ncf0,
    Ncf1,
    Ncf2,
    Cmd1,
    Cmd2,
    Cmd3,
    Cmd4,
    Cmd5,
    Cfg,
    Ser,
    Ina,
    Gre,
    Rsi,
    Ale,
    AckAle,
}

impl MessageKind {
    pub const ALL: [MessageKind; 17] = [
        MessageKind::Ctr,
        MessageKind::AckCtr,
        MessageKind::Ncf0,
        MessageKind::Ncf1,
        MessageKind::Ncf2,
        MessageKind::Cmd1,
        MessageKind::Cmd2,
        MessageKind::Cmd3,
        MessageKind::Cmd4,
        MessageKind::Cmd5,
        MessageKind::Cfg,
        MessageKind::Ser,
        MessageKind::Ina,
        MessageKind::Gre,
        MessageKind::Rsi,
        MessageKind::Ale,
        MessageKind::AckAle,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag.checked_sub(1)? as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Ctr => "CTR",
            MessageKind::AckCtr => "ACKCTR",
            MessageKind::Ncf0 => "NCF0",
            MessageKind::Ncf1 => "NCF1",
            MessageKind::Ncf2 => "NCF2",
            MessageKind::Cmd1 => "CMD1",
            MessageKind::Cmd2 => "CMD2",
            MessageKind::Cmd3 => "CMD3",
            MessageKind::Cmd4 => "CMD4",
            MessageKind::Cmd5 => "CMD5",
            MessageKind::Cfg => "CFG",
            MessageKind::Ser => "SER",
            MessageKind::Ina => "INA",
            MessageKind::Gre => "GRE",
            MessageKind::Rsi => "RSI",
            MessageKind::Ale => "ALE",
            MessageKind::AckAle => "ACKALE",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Rule parameters shipped in CMD3 and SER.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleRecord {
    pub v_min: f32,
    pub v_max: f32,
    pub delta_v: f32,
    pub t_cr: f32,
    pub n_c: u16,
    pub d_min: f32,
    pub delta_d: f32,
    pub gre_period: f32,
    pub sample_period: f32,
}

impl RuleRecord {
    pub const LEN: usize = 34;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlertCause {
    /// Static/dynamic rule: the sensed value that tripped it.
    Temperature { value: f32 },
    /// Community rule: the neighbour and its estimated distance.
    Proximity { neighbor: NodeId, distance: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Ctr,
    AckCtr,
    Ncf0,
    Ncf1,
    Ncf2,
    Cmd1 { symbol: String, incompatible: Vec<String> },
    Cmd2,
    Cmd3(RuleRecord),
    Cmd4,
    Cmd5,
    Cfg { symbol: String, gre_period: f32, sample_period: f32 },
    Ser(RuleRecord),
    Ina { value: f32, level: SecurityLevel },
    Gre { symbol: String, level: SecurityLevel },
    Rsi { symbol: String, level: SecurityLevel, gre_rssi: f32 },
    Ale { level: SecurityLevel, cause: AlertCause },
    AckAle { ale_seq: u16 },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Ctr => MessageKind::Ctr,
            Payload::AckCtr => MessageKind::AckCtr,
            Payload::Ncf0 => MessageKind::Ncf0,
            Payload::Ncf1 => MessageKind::Ncf1,
            Payload::Ncf2 => MessageKind::Ncf2,
            Payload::Cmd1 { .. } => MessageKind::Cmd1,
            Payload::Cmd2 => MessageKind::Cmd2,
            Payload::Cmd3(_) => MessageKind::Cmd3,
            Payload::Cmd4 => MessageKind::Cmd4,
            Payload::Cmd5 => MessageKind::Cmd5,
            Payload::Cfg { .. } => MessageKind::Cfg,
            Payload::Ser(_) => MessageKind::Ser,
            Payload::Ina { .. } => MessageKind::Ina,
            Payload::Gre { .. } => MessageKind::Gre,
            Payload::Rsi { .. } => MessageKind::Rsi,
            Payload::Ale { .. } => MessageKind::Ale,
            Payload::AckAle { .. } => MessageKind::AckAle,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub src: NodeId,
    pub dst: NodeId,
    pub seq: u16,
    pub payload: Payload,
}

impl Message {
    pub fn new(src: NodeId, dst: NodeId, seq: u16, payload: Payload) -> Self {
        Self { src, dst, seq, payload }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    pub fn is_broadcast(&self) -> bool {
        self.dst == BROADCAST
    }

    /// Encoded length in bytes, header included.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + payload_len(&self.payload)
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut body = Vec::with_capacity(MAX_PAYLOAD);
        encode_payload(&self.payload, &mut body)?;
        if body.len() > MAX_PAYLOAD {
            return Err(CodecError::PayloadTooLarge(body.len()));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.push(self.kind().tag());
        out.extend_from_slice(&self.src.to_be_bytes());
        out.extend_from_slice(&self.dst.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let tag = r.u8()?;
        let kind = MessageKind::from_tag(tag).ok_or(CodecError::UnknownTag(tag))?;
        let src = r.u16()?;
        let dst = r.u16()?;
        let seq = r.u16()?;
        if bytes.len() - HEADER_LEN > MAX_PAYLOAD {
            return Err(CodecError::PayloadTooLarge(bytes.len() - HEADER_LEN));
        }
        let payload = decode_payload(kind, &mut r)?;
        if r.pos != bytes.len() {
            return Err(CodecError::Trailing(bytes.len() - r.pos));
        }
        Ok(Self { src, dst, seq, payload })
    }
}

fn payload_len(p: &Payload) -> usize {
    let sym = |s: &String| 1 + s.len();
    match p {
        Payload::Ctr
        | Payload::AckCtr
        | Payload::Ncf0
        | Payload::Ncf1
        | Payload::Ncf2
        | Payload::Cmd2
        | Payload::Cmd4
        | Payload::Cmd5 => 0,
        Payload::Cmd1 { symbol, incompatible } => {
            sym(symbol) + 1 + incompatible.iter().map(sym).sum::<usize>()
        }
        Payload::Cmd3(_) | Payload::Ser(_) => RuleRecord::LEN,
        Payload::Cfg { symbol, .. } => sym(symbol) + 8,
        Payload::Ina { .. } => 5,
        Payload::Gre { symbol, .. } => sym(symbol) + 1,
        Payload::Rsi { symbol, .. } => sym(symbol) + 5,
        Payload::Ale { cause, .. } => {
            2 + match cause {
                AlertCause::Temperature { .. } => 4,
                AlertCause::Proximity { .. } => 6,
            }
        }
        Payload::AckAle { .. } => 2,
    }
}

fn put_symbol(s: &str, out: &mut Vec<u8>) -> Result<(), CodecError> {
    if s.len() > MAX_SYMBOL_LEN {
        return Err(CodecError::SymbolTooLong(s.to_owned()));
    }
    out.push(s.len() as u8);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f32(v: f32, out: &mut Vec<u8>) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_record(r: &RuleRecord, out: &mut Vec<u8>) {
    for v in [r.v_min, r.v_max, r.delta_v, r.t_cr] {
        put_f32(v, out);
    }
    out.extend_from_slice(&r.n_c.to_be_bytes());
    for v in [r.d_min, r.delta_d, r.gre_period, r.sample_period] {
        put_f32(v, out);
    }
}

fn encode_payload(p: &Payload, out: &mut Vec<u8>) -> Result<(), CodecError> {
    match p {
        Payload::Ctr
        | Payload::AckCtr
        | Payload::Ncf0
        | Payload::Ncf1
        | Payload::Ncf2
        | Payload::Cmd2
        | Payload::Cmd4
        | Payload::Cmd5 => {}
        Payload::Cmd1 { symbol, incompatible } => {
            put_symbol(symbol, out)?;
            let n = u8::try_from(incompatible.len()).map_err(|_| CodecError::PayloadTooLarge(usize::MAX))?;
            out.push(n);
            for s in incompatible {
                put_symbol(s, out)?;
            }
        }
        Payload::Cmd3(r) | Payload::Ser(r) => put_record(r, out),
        Payload::Cfg { symbol, gre_period, sample_period } => {
            put_symbol(symbol, out)?;
            put_f32(*gre_period, out);
            put_f32(*sample_period, out);
        }
        Payload::Ina { value, level } => {
            put_f32(*value, out);
            out.push(level.to_u8());
        }
        Payload::Gre { symbol, level } => {
            put_symbol(symbol, out)?;
            out.push(level.to_u8());
        }
        Payload::Rsi { symbol, level, gre_rssi } => {
            put_symbol(symbol, out)?;
            out.push(level.to_u8());
            put_f32(*gre_rssi, out);
        }
        Payload::Ale { level, cause } => {
            out.push(level.to_u8());
            match cause {
                AlertCause::Temperature { value } => {
                    out.push(0);
                    put_f32(*value, out);
                }
                AlertCause::Proximity { neighbor, distance } => {
                    out.push(1);
                    out.extend_from_slice(&neighbor.to_be_bytes());
                    put_f32(*distance, out);
                }
            }
        }
        Payload::AckAle { ale_seq } => out.extend_from_slice(&ale_seq.to_be_bytes()),
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CodecError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn f32(&mut self) -> Result<f32, CodecError> {
        let b = self.take(4)?;
        Ok(f32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn symbol(&mut self) -> Result<String, CodecError> {
        let n = self.u8()? as usize;
        if n > MAX_SYMBOL_LEN {
            return Err(CodecError::InvalidField("symbol length"));
        }
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| CodecError::InvalidField("symbol utf-8"))
    }

    fn level(&mut self) -> Result<SecurityLevel, CodecError> {
        SecurityLevel::from_u8(self.u8()?).ok_or(CodecError::InvalidField("security level"))
    }

    fn record(&mut self) -> Result<RuleRecord, CodecError> {
        Ok(RuleRecord {
            v_min: self.f32()?,
            v_max: self.f32()?,
            delta_v: self.f32()?,
            t_cr: self.f32()?,
            n_c: self.u16()?,
            d_min: self.f32()?,
            delta_d: self.f32()?,
            gre_period: self.f32()?,
            sample_period: self.f32()?,
        })
    }
}

fn decode_payload(kind: MessageKind, r: &mut Reader<'_>) -> Result<Payload, CodecError> {
    Ok(match kind {
        MessageKind::Ctr => Payload::Ctr,
        MessageKind::AckCtr => Payload::AckCtr,
        MessageKind::Ncf0 => Payload::Ncf0,
        MessageKind::Ncf1 => Payload::Ncf1,
        MessageKind::Ncf2 => Payload::Ncf2,
        MessageKind::Cmd1 => {
            let symbol = r.symbol()?;
            let n = r.u8()?;
            let incompatible = (0..n).map(|_| r.symbol()).collect::<Result<_, _>>()?;
            Payload::Cmd1 { symbol, incompatible }
        }
        MessageKind::Cmd2 => Payload::Cmd2,
        MessageKind::Cmd3 => Payload::Cmd3(r.record()?),
        MessageKind::Cmd4 => Payload::Cmd4,
        MessageKind::Cmd5 => Payload::Cmd5,
        MessageKind::Cfg => Payload::Cfg {
            symbol: r.symbol()?,
            gre_period: r.f32()?,
            sample_period: r.f32()?,
        },
        MessageKind::Ser => Payload::Ser(r.record()?),
        MessageKind::Ina => Payload::Ina { value: r.f32()?, level: r.level()? },
        MessageKind::Gre => Payload::Gre { symbol: r.symbol()?, level: r.level()? },
        MessageKind::Rsi => Payload::Rsi { symbol: r.symbol()?, level: r.level()?, gre_rssi: r.f32()? },
        MessageKind::Ale => {
            let level = r.level()?;
            let cause = match r.u8()? {
                0 => AlertCause::Temperature { value: r.f32()? },
                1 => AlertCause::Proximity { neighbor: r.u16()?, distance: r.f32()? },
                _ => return Err(CodecError::InvalidField("alert cause")),
            };
            Payload::Ale { level, cause }
        }
        MessageKind::AckAle => Payload::AckAle { ale_seq: r.u16()? },
    })
}
