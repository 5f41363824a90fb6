//! Per-packet outcome records and their CSV form.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

use super::event::Time;
use crate::net::TrafficClass;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossCause {
    /// Queue overflow or eviction.
    Queue,
    /// Channel never clear within the backoff budget.
    MacBusy,
    /// Not acknowledged after all retries.
    Channel,
    NoRoute,
    NoResponders,
    Ttl,
    DeadEnd,
    /// Still in flight when the trial ended.
    Undelivered,
    Depleted,
}

impl LossCause {
    pub const ALL: [LossCause; 9] = [
        LossCause::Queue,
        LossCause::MacBusy,
        LossCause::Channel,
        LossCause::NoRoute,
        LossCause::NoResponders,
        LossCause::Ttl,
        LossCause::DeadEnd,
        LossCause::Undelivered,
        LossCause::Depleted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossCause::Queue => "queue",
            LossCause::MacBusy => "mac_busy",
            LossCause::Channel => "channel",
            LossCause::NoRoute => "no_route",
            LossCause::NoResponders => "no_responders",
            LossCause::Ttl => "ttl",
            LossCause::DeadEnd => "dead_end",
            LossCause::Undelivered => "undelivered",
            LossCause::Depleted => "depleted",
        }
    }
}

impl fmt::Display for LossCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossCause {
    type Err = RecordError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossCause::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| RecordError::Field(format!("loss cause `{s}`")))
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("bad field: {0}")]
    Field(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketRecord {
    pub class: TrafficClass,
    pub origin: NodeId,
    pub seq: u16,
    pub birth: Time,
    pub delivery: Option<Time>,
    pub loss: Option<LossCause>,
    pub hops: u8,
    pub path_id: u8,
}

impl PacketRecord {
    /// Exactly one of delivery time and loss cause must be present.
    pub fn validate(&self) -> Result<(), RecordError> {
        match (self.delivery, self.loss) {
            (Some(d), None) if d < self.birth => {
                Err(RecordError::Malformed(format!("{}/{} delivered before birth", self.origin, self.seq)))
            }
            (Some(_), None) | (None, Some(_)) => Ok(()),
            (Some(_), Some(_)) => Err(RecordError::Malformed(format!(
                "{}/{} has both a delivery time and a loss cause",
                self.origin, self.seq
            ))),
            (None, None) => {
                Err(RecordError::Malformed(format!("{}/{} has neither delivery time nor loss cause", self.origin, self.seq)))
            }
        }
    }
}

pub const CSV_HEADER: [&str; 8] = ["class", "origin", "seq", "birth", "delivery", "loss_cause", "hops", "path_id"];

/// Seconds with nanosecond resolution, formatted without rounding.
pub fn fmt_time(t: Time) -> String {
    format!("{}.{:09}", t / 1_000_000_000, t % 1_000_000_000)
}

/// Inverse of [`fmt_time`]; accepts up to nine decimals.
pub fn parse_time(s: &str) -> Result<Time, RecordError> {
    let bad = || RecordError::Field(format!("time `{s}`"));
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() || frac.len() > 9 || !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let whole: u64 = int.parse().map_err(|_| bad())?;
    let mut nanos: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    for _ in frac.len()..9 {
        nanos *= 10;
    }
    whole.checked_mul(1_000_000_000).and_then(|w| w.checked_add(nanos)).ok_or_else(bad)
}

pub fn write_csv<W: Write>(out: W, records: &[PacketRecord]) -> Result<(), RecordError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.class.name().to_string(),
            r.origin.to_string(),
            r.seq.to_string(),
            fmt_time(r.birth),
            r.delivery.map(fmt_time).unwrap_or_default(),
            r.loss.map(|c| c.name().to_string()).unwrap_or_default(),
            r.hops.to_string(),
            r.path_id.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<PacketRecord>, RecordError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(RecordError::Malformed(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let f = |i: usize| row.get(i).unwrap_or("");
        let num = |i: usize| -> Result<u64, RecordError> {
            f(i).parse().map_err(|_| RecordError::Field(format!("{} `{}`", CSV_HEADER[i], f(i))))
        };
        let class = TrafficClass::from_name(f(0)).ok_or_else(|| RecordError::Field(format!("class `{}`", f(0))))?;
        let rec = PacketRecord {
            class,
            origin: u16::try_from(num(1)?).map_err(|_| RecordError::Field("origin".into()))?,
            seq: u16::try_from(num(2)?).map_err(|_| RecordError::Field("seq".into()))?,
            birth: parse_time(f(3))?,
            delivery: if f(4).is_empty() { None } else { Some(parse_time(f(4))?) },
            loss: if f(5).is_empty() { None } else { Some(f(5).parse()?) },
            hops: u8::try_from(num(6)?).map_err(|_| RecordError::Field("hops".into()))?,
            path_id: u8::try_from(num(7)?).map_err(|_| RecordError::Field("path_id".into()))?,
        };
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}
