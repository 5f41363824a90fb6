//! Per-node energy ledger driven by radio state occupancy.

use super::event::{secs, Time};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams {
    pub voltage: f64,
    /// Always-on microcontroller draw, mA.
    pub cpu_ma: f64,
    pub tx_ma: f64,
    /// Receive and idle-listen draw, mA.
    pub rx_ma: f64,
    pub initial_j: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self { voltage: 3.0, cpu_ma: 1.8, tx_ma: 17.4, rx_ma: 19.7, initial_j: 18720.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadioState {
    Listen,
    Transmit,
}

/// Lazily updated ledger: energy is debited whenever the radio state
/// changes or the ledger is read.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    params: EnergyParams,
    unlimited: bool,
    remaining: f64,
    consumed: f64,
    state: RadioState,
    since: Time,
    /// Seconds spent listening and transmitting.
    occupancy: [f64; 2],
}

impl EnergyLedger {
    pub fn new(params: EnergyParams, unlimited: bool) -> Self {
        Self {
            params,
            unlimited,
            remaining: params.initial_j,
            consumed: 0.0,
            state: RadioState::Listen,
            since: 0,
            occupancy: [0.0; 2],
        }
    }

    fn draw_ma(&self, s: RadioState) -> f64 {
        self.params.cpu_ma
            + match s {
                RadioState::Listen => self.params.rx_ma,
                RadioState::Transmit => self.params.tx_ma,
            }
    }

    /// Debit up to `now`.
    pub fn advance(&mut self, now: Time) {
        assert!(now >= self.since, "energy ledger time went backwards");
        let dt = secs(now - self.since);
        let j = self.draw_ma(self.state) * 1e-3 * self.params.voltage * dt;
        self.consumed += j;
        if !self.unlimited {
            self.remaining = (self.remaining - j).max(0.0);
        }
        self.occupancy[self.state as usize] += dt;
        self.since = now;
    }

    pub fn set_state(&mut self, now: Time, s: RadioState) {
        self.advance(now);
        self.state = s;
    }

    pub fn state(&self) -> RadioState {
        self.state
    }

    /// Joules left; infinite for mains-powered nodes.
    pub fn remaining(&self) -> f64 {
        if self.unlimited {
            f64::INFINITY
        } else {
            self.remaining
        }
    }

    pub fn consumed(&self) -> f64 {
        self.consumed
    }

    pub fn depleted(&self) -> bool {
        !self.unlimited && self.remaining <= 0.0
    }

    /// (listen seconds, transmit seconds).
    pub fn occupancy(&self) -> (f64, f64) {
        (self.occupancy[0], self.occupancy[1])
    }

    /// Energy implied by the occupancy totals, joules.
    pub fn expected_consumption(&self) -> f64 {
        let (listen, tx) = self.occupancy();
        self.params.voltage * 1e-3 * (self.draw_ma(RadioState::Listen) * listen + self.draw_ma(RadioState::Transmit) * tx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::event::from_secs;

    #[test]
    fn debits_follow_state_currents() {
        let p = EnergyParams::default();
        let mut e = EnergyLedger::new(p, false);
        e.set_state(from_secs(10.0), RadioState::Transmit);
        e.set_state(from_secs(10.5), RadioState::Listen);
        e.advance(from_secs(20.0));
        let expect = 3.0e-3 * ((1.8 + 19.7) * 19.5 + (1.8 + 17.4) * 0.5);
        assert!((e.consumed() - expect).abs() < 1e-12);
        assert!((e.remaining() - (18720.0 - expect)).abs() < 1e-9);
        assert!((e.expected_consumption() - e.consumed()).abs() < 1e-12);
    }

    #[test]
    fn unlimited_never_depletes() {
        let mut e = EnergyLedger::new(EnergyParams { initial_j: 1e-6, ..EnergyParams::default() }, true);
        e.advance(from_secs(100.0));
        assert!(!e.depleted());
        assert!(e.remaining().is_infinite());
        let mut f = EnergyLedger::new(EnergyParams { initial_j: 1e-6, ..EnergyParams::default() }, false);
        f.advance(from_secs(100.0));
        assert!(f.depleted());
        assert_eq!(f.remaining(), 0.0);
    }
}
