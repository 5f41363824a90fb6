//! Unslotted CSMA/CA in the style of IEEE 802.15.4, reduced to what the
//! simulator needs: random exponential backoff, a clear-channel check,
//! RX-to-TX turnaround, and acknowledged unicast with bounded retries.
//!
//! The MAC is a passive state machine. The engine schedules the delays it
//! returns and calls back with the matching `gen` value; callbacks carrying
//! a stale generation are ignored.

use std::collections::VecDeque;

use rand::Rng;

use super::event::Time;
use crate::app::message::BROADCAST;
use crate::net::{Packet, TrafficClass};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacParams {
    pub min_be: u8,
    pub max_be: u8,
    /// Backoff exponents for alert frames under the priority discipline.
    pub alert_min_be: u8,
    pub alert_max_be: u8,
    pub max_backoffs: u8,
    pub alert_max_backoffs: u8,
    /// Retransmissions of an unacknowledged unicast frame.
    pub max_retries: u8,
    pub unit_backoff: Time,
    pub cca: Time,
    pub turnaround: Time,
    pub ack_wait: Time,
    pub queue_capacity: usize,
    pub bitrate_bps: f64,
    /// PHY preamble, SFD and length bytes.
    pub phy_overhead: usize,
    /// MAC header and FCS bytes.
    pub mac_overhead: usize,
    /// Acknowledgement frame length including PHY overhead.
    pub ack_len: usize,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            min_be: 3,
            max_be: 5,
            alert_min_be: 1,
            alert_max_be: 3,
            max_backoffs: 4,
            alert_max_backoffs: 4,
            max_retries: 3,
            unit_backoff: 320_000,
            cca: 128_000,
            turnaround: 192_000,
            ack_wait: 864_000,
            queue_capacity: 32,
            bitrate_bps: 250_000.0,
            phy_overhead: 6,
            mac_overhead: 11,
            ack_len: 11,
        }
    }
}

impl MacParams {
    pub fn airtime_bytes(&self, bytes: usize) -> Time {
        ((bytes * 8) as f64 / self.bitrate_bps * 1e9).round() as Time
    }

    /// On-air duration of a frame carrying `payload` network bytes.
    pub fn airtime(&self, payload: usize) -> Time {
        self.airtime_bytes(payload + self.phy_overhead + self.mac_overhead)
    }

    pub fn ack_airtime(&self) -> Time {
        self.airtime_bytes(self.ack_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueDiscipline {
    Fifo,
    /// Ordered by traffic class; a full queue evicts its lowest-class tail
    /// for a more important arrival. Alert frames also contend with the
    /// shorter alert backoff window.
    Priority,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub src: NodeId,
    pub dst: NodeId,
    pub packet: Packet,
    pub power_dbm: f64,
    pub mac_seq: u8,
    pub retries: u8,
}

impl Frame {
    pub fn is_broadcast(&self) -> bool {
        self.dst == BROADCAST
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Enqueued {
    Accepted,
    Rejected(Frame),
    /// Accepted after pushing out a less important frame.
    Evicted(Frame),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacPhase {
    Idle,
    Backoff,
    Turnaround,
    Transmitting,
    AwaitAck,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CcaOutcome {
    /// Channel clear: start transmitting after this turnaround.
    Transmit(Time),
    /// Busy: check again after this delay.
    Backoff(Time),
    /// Busy too many times.
    Drop(Frame),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TxEndOutcome {
    AwaitAck(Time),
    Done(Frame),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AckTimeoutOutcome {
    Retry(Time),
    Failed(Frame),
}

#[derive(Debug, Clone)]
pub struct Mac {
    params: MacParams,
    discipline: QueueDiscipline,
    queue: VecDeque<Frame>,
    current: Option<Frame>,
    phase: MacPhase,
    nb: u8,
    be: u8,
    gen: u64,
    next_seq: u8,
}

impl Mac {
    pub fn new(params: MacParams, discipline: QueueDiscipline) -> Self {
        Self {
            params,
            discipline,
            queue: VecDeque::new(),
            current: None,
            phase: MacPhase::Idle,
            nb: 0,
            be: params.min_be,
            gen: 0,
            next_seq: 0,
        }
    }

    pub fn params(&self) -> &MacParams {
        &self.params
    }

    pub fn phase(&self) -> MacPhase {
        self.phase
    }

    pub fn gen(&self) -> u64 {
        self.gen
    }

    pub fn current(&self) -> Option<&Frame> {
        self.current.as_ref()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn enqueue(&mut self, mut frame: Frame) -> Enqueued {
        frame.mac_seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        let cap = self.params.queue_capacity;
        match self.discipline {
            QueueDiscipline::Fifo => {
                if self.queue.len() >= cap {
                    return Enqueued::Rejected(frame);
                }
                self.queue.push_back(frame);
                Enqueued::Accepted
            }
            QueueDiscipline::Priority => {
                let class = frame.packet.class;
                let mut evicted = None;
                if self.queue.len() >= cap {
                    match self.queue.iter().rposition(|f| f.packet.class > class) {
                        Some(i) => evicted = self.queue.remove(i),
                        None => return Enqueued::Rejected(frame),
                    }
                }
                let at = self.queue.iter().position(|f| f.packet.class > class).unwrap_or(self.queue.len());
                self.queue.insert(at, frame);
                match evicted {
                    Some(f) => Enqueued::Evicted(f),
                    None => Enqueued::Accepted,
                }
            }
        }
    }

    fn backoff_delay<R: Rng + ?Sized>(&self, rng: &mut R) -> Time {
        let slots = rng.random_range(0..(1u64 << self.be));
        slots * self.params.unit_backoff + self.params.cca
    }

    /// Start contention for the next queued frame if idle. Returns the delay
    /// until the clear-channel check.
    pub fn kick<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<Time> {
        if self.phase != MacPhase::Idle {
            return None;
        }
        let frame = self.queue.pop_front()?;
        self.current = Some(frame);
        self.start_contention(rng)
    }

    fn favoured(&self) -> bool {
        self.discipline == QueueDiscipline::Priority
            && self.current.as_ref().is_some_and(|f| f.packet.class == TrafficClass::Alert)
    }

    fn be_range(&self) -> (u8, u8) {
        if self.favoured() {
            (self.params.alert_min_be, self.params.alert_max_be)
        } else {
            (self.params.min_be, self.params.max_be)
        }
    }

    fn start_contention<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<Time> {
        self.nb = 0;
        self.be = self.be_range().0;
        self.phase = MacPhase::Backoff;
        self.gen += 1;
        Some(self.backoff_delay(rng))
    }

    pub fn on_cca<R: Rng + ?Sized>(&mut self, busy: bool, rng: &mut R) -> CcaOutcome {
        debug_assert_eq!(self.phase, MacPhase::Backoff);
        self.gen += 1;
        if !busy {
            self.phase = MacPhase::Turnaround;
            return CcaOutcome::Transmit(self.params.turnaround);
        }
        self.nb += 1;
        self.be = (self.be + 1).min(self.be_range().1);
        let limit = if self.favoured() { self.params.alert_max_backoffs } else { self.params.max_backoffs };
        if self.nb > limit {
            return CcaOutcome::Drop(self.finish());
        }
        CcaOutcome::Backoff(self.backoff_delay(rng))
    }

    /// Turnaround elapsed: the frame goes on air.
    pub fn begin_tx(&mut self) -> &Frame {
        debug_assert_eq!(self.phase, MacPhase::Turnaround);
        self.phase = MacPhase::Transmitting;
        self.gen += 1;
        self.current.as_ref().expect("transmitting without a frame")
    }

    pub fn on_tx_end(&mut self) -> TxEndOutcome {
        debug_assert_eq!(self.phase, MacPhase::Transmitting);
        self.gen += 1;
        let bcast = self.current.as_ref().is_some_and(Frame::is_broadcast);
        if bcast {
            return TxEndOutcome::Done(self.finish());
        }
        self.phase = MacPhase::AwaitAck;
        TxEndOutcome::AwaitAck(self.params.ack_wait)
    }

    /// An acknowledgement for `mac_seq` arrived. Returns the delivered frame
    /// if it matches the one awaiting acknowledgement.
    pub fn on_ack(&mut self, mac_seq: u8) -> Option<Frame> {
        if self.phase != MacPhase::AwaitAck || self.current.as_ref().map(|f| f.mac_seq) != Some(mac_seq) {
            return None;
        }
        self.gen += 1;
        Some(self.finish())
    }

    pub fn on_ack_timeout<R: Rng + ?Sized>(&mut self, rng: &mut R) -> AckTimeoutOutcome {
        debug_assert_eq!(self.phase, MacPhase::AwaitAck);
        let f = self.current.as_mut().expect("awaiting ack without a frame");
        if f.retries >= self.params.max_retries {
            self.gen += 1;
            return AckTimeoutOutcome::Failed(self.finish());
        }
        f.retries += 1;
        AckTimeoutOutcome::Retry(self.start_contention(rng).expect("contention delay"))
    }

    fn finish(&mut self) -> Frame {
        self.phase = MacPhase::Idle;
        self.current.take().expect("no current frame")
    }

    /// Remove every frame, current one included.
    pub fn drain(&mut self) -> Vec<Frame> {
        self.gen += 1;
        self.phase = MacPhase::Idle;
        let mut out: Vec<Frame> = self.current.take().into_iter().collect();
        out.extend(self.queue.drain(..));
        out
    }
}
