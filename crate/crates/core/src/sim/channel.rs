//! Radio channel: log-distance path loss with per-link lognormal shadowing,
//! and an additive-interference reception model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::num::Scalar;

/// Mean log-distance path loss `PL(d) = PL(d0) + 10 n log10(d / d0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLoss<T> {
    pub exponent: T,
    /// Loss at the reference distance, dB.
    pub pl_d0: T,
    /// Reference distance, meters.
    pub d0: T,
}

impl<T: Scalar> PathLoss<T> {
    /// Distances below `d0` are clamped to `d0`.
    pub fn mean_loss(&self, distance: T) -> T {
        let d = if distance > self.d0 { distance } else { self.d0 };
        self.pl_d0 + T::lit(10.0) * self.exponent * (d / self.d0).log10()
    }

    pub fn mean_rx_power(&self, tx_power_dbm: T, distance: T) -> T {
        tx_power_dbm - self.mean_loss(distance)
    }

    /// Inverse of [`PathLoss::mean_rx_power`]. Readings above the reference
    /// power clamp to `d0`.
    pub fn rssi_to_distance(&self, tx_power_dbm: T, rssi_dbm: T) -> T {
        let excess = tx_power_dbm - self.pl_d0 - rssi_dbm;
        if excess <= T::zero() {
            return self.d0;
        }
        self.d0 * T::lit(10.0).powf(excess / (T::lit(10.0) * self.exponent))
    }

    /// Distance at which the mean received power equals `rx_dbm`.
    pub fn range_for(&self, tx_power_dbm: T, rx_dbm: T) -> T {
        self.rssi_to_distance(tx_power_dbm, rx_dbm)
    }
}

impl Default for PathLoss<f64> {
    fn default() -> Self {
        Self { exponent: 2.4, pl_d0: 55.0, d0: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub path_loss: PathLoss<f64>,
    /// Lognormal shadowing standard deviation, dB.
    pub sigma_db: f64,
    pub sinr_threshold_db: f64,
    pub noise_floor_dbm: f64,
    /// Clear-channel assessment threshold, dBm.
    pub cca_threshold_dbm: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            path_loss: PathLoss::default(),
            sigma_db: 4.0,
            sinr_threshold_db: 6.0,
            noise_floor_dbm: -100.0,
            cca_threshold_dbm: -95.0,
        }
    }
}

impl ChannelParams {
    /// Weakest signal decodable in the absence of interference.
    pub fn sensitivity_dbm(&self) -> f64 {
        self.noise_floor_dbm + self.sinr_threshold_db
    }

    /// Distance at which a transmission at `tx_power_dbm` is decodable on a
    /// mean (unshadowed) channel with no interference.
    pub fn mean_decode_range(&self, tx_power_dbm: f64) -> f64 {
        self.path_loss.range_for(tx_power_dbm, self.sensitivity_dbm())
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Channel state for one trial: parameters plus one symmetric shadowing draw
/// per unordered node pair.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub params: ChannelParams,
    n: usize,
    shadowing: Vec<f32>,
}

impl ChannelModel {
    pub fn new(params: ChannelParams, n_nodes: usize, seed: u64) -> Self {
        let pairs = n_nodes * n_nodes.saturating_sub(1) / 2;
        let shadowing = if params.sigma_db > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, params.sigma_db).expect("finite sigma");
            (0..pairs).map(|_| normal.sample(&mut rng) as f32).collect()
        } else {
            vec![0.0; pairs]
        };
        Self { params, n: n_nodes, shadowing }
    }

    pub fn shadowing_db(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        // row-major upper triangle
        let idx = i * (2 * self.n - i - 1) / 2 + (j - i - 1);
        self.shadowing[idx] as f64
    }

    pub fn rx_power_dbm(&self, tx_power_dbm: f64, a: usize, b: usize, distance: f64) -> f64 {
        self.params.path_loss.mean_rx_power(tx_power_dbm, distance) - self.shadowing_db(a, b)
    }
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Lock {
    tx: u64,
    signal_mw: f64,
}

#[derive(Debug, Clone)]
struct ActiveTx {
    id: u64,
    sender: usize,
    rx_mw: Vec<f64>,
}

/// Shared medium: ongoing transmissions and the frame each receiver is
/// locked on.
///
/// A receiver locks on a new frame only when idle and when the frame's SINR
/// clears the threshold. Every later overlapping transmission re-checks the
/// SINR of the locked frame. A lock that falls below threshold is dropped, so
/// a stronger frame that arrives later can still be captured.
#[derive(Debug, Clone)]
pub struct Medium {
    noise_mw: f64,
    sinr_lin: f64,
    active: Vec<ActiveTx>,
    locks: Vec<Option<Lock>>,
}

impl Medium {
    pub fn new(params: &ChannelParams, n_nodes: usize) -> Self {
        Self {
            noise_mw: dbm_to_mw(params.noise_floor_dbm),
            sinr_lin: dbm_to_mw(params.sinr_threshold_db),
            active: Vec::new(),
            locks: vec![None; n_nodes],
        }
    }

    /// Total received power at `node` from ongoing transmissions, dBm.
    pub fn sensed_dbm(&self, node: usize) -> f64 {
        let mw: f64 = self.active.iter().map(|t| t.rx_mw[node]).sum();
        if mw > 0.0 {
            mw_to_dbm(mw)
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn is_receiving(&self, node: usize) -> bool {
        self.locks[node].is_some()
    }

    /// Transmission `node` is currently locked on.
    pub fn locked_on(&self, node: usize) -> Option<u64> {
        self.locks[node].map(|l| l.tx)
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    /// Drop whatever `node` was receiving (it switched to transmit).
    pub fn abort_reception(&mut self, node: usize) {
        self.locks[node] = None;
    }

    fn interference_mw(&self, node: usize, except: u64) -> f64 {
        self.active.iter().filter(|t| t.id != except).map(|t| t.rx_mw[node]).sum()
    }

    /// Register a new transmission. `rx_dbm[r]` is the power at node `r`;
    /// `can_receive[r]` is false for the sender, nodes currently transmitting
    /// and halted nodes.
    pub fn start_tx(&mut self, id: u64, sender: usize, rx_dbm: &[f64], can_receive: &[bool]) {
        let rx_mw: Vec<f64> = rx_dbm
            .iter()
            .enumerate()
            .map(|(r, p)| if r == sender { 0.0 } else { dbm_to_mw(*p) })
            .collect();
        self.locks[sender] = None;
        self.active.push(ActiveTx { id, sender, rx_mw });
        let new = self.active.last().expect("just pushed");
        let new_mw = new.rx_mw.clone();

        for r in 0..self.locks.len() {
            if r == sender || !can_receive[r] {
                continue;
            }
            if let Some(lock) = self.locks[r] {
                let i = self.interference_mw(r, lock.tx);
                if lock.signal_mw / (self.noise_mw + i) < self.sinr_lin {
                    self.locks[r] = None;
                }
            }
            if self.locks[r].is_none() {
                let s = new_mw[r];
                let i = self.interference_mw(r, id);
                if s / (self.noise_mw + i) >= self.sinr_lin {
                    self.locks[r] = Some(Lock { tx: id, signal_mw: s });
                }
            }
        }
    }

    /// Finish a transmission; returns the receivers that decoded it.
    pub fn end_tx(&mut self, id: u64) -> Vec<usize> {
        let Some(pos) = self.active.iter().position(|t| t.id == id) else {
            return Vec::new();
        };
        self.active.swap_remove(pos);
        let mut decoded = Vec::new();
        for (r, lock) in self.locks.iter_mut().enumerate() {
            if lock.is_some_and(|l| l.tx == id) {
                decoded.push(r);
                *lock = None;
            }
        }
        decoded
    }

    pub fn sender_of(&self, id: u64) -> Option<usize> {
        self.active.iter().find(|t| t.id == id).map(|t| t.sender)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_channel() -> ChannelParams {
        ChannelParams { sigma_db: 0.0, ..ChannelParams::default() }
    }

    #[test]
    fn rssi_inverse_at_reference_and_per_decade() {
        let pl = PathLoss::<f64>::default();
        assert_eq!(pl.rssi_to_distance(0.0, -55.0), 1.0);
        let r10 = pl.mean_rx_power(0.0, 10.0);
        let r100 = pl.mean_rx_power(0.0, 100.0);
        assert!((r10 - r100 - 24.0).abs() < 1e-12);
        assert!((pl.rssi_to_distance(0.0, r10 - 24.0) / pl.rssi_to_distance(0.0, r10) - 10.0).abs() < 1e-9);
        // clamp above reference
        assert_eq!(pl.rssi_to_distance(0.0, -20.0), 1.0);
    }

    #[test]
    fn f32_path_loss_agrees_with_f64() {
        let pl32 = PathLoss::<f32> { exponent: 2.4, pl_d0: 55.0, d0: 1.0 };
        let pl64 = PathLoss::<f64>::default();
        for d in [1.0, 3.0, 17.5, 42.0] {
            let a = pl32.mean_loss(d as f32) as f64;
            let b = pl64.mean_loss(d);
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn mean_decode_range_follows_parameters() {
        let p = ChannelParams::default();
        // 0 dBm - 55 - 24 log10(d) = -94  =>  d = 10^(39/24)
        let expect = 10f64.powf(39.0 / 24.0);
        assert!((p.mean_decode_range(0.0) - expect).abs() < 1e-9);
    }

    #[test]
    fn shadowing_is_symmetric_and_seeded() {
        let a = ChannelModel::new(ChannelParams::default(), 10, 7);
        let b = ChannelModel::new(ChannelParams::default(), 10, 7);
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(a.shadowing_db(i, j), a.shadowing_db(j, i));
                assert_eq!(a.shadowing_db(i, j), b.shadowing_db(i, j));
            }
        }
        assert_ne!(a.shadowing_db(0, 1), a.shadowing_db(0, 2));
        let c = ChannelModel::new(ChannelParams::default(), 10, 8);
        assert_ne!(a.shadowing_db(3, 4), c.shadowing_db(3, 4));
    }

    fn link(p: &ChannelParams, d: f64) -> f64 {
        p.path_loss.mean_rx_power(0.0, d)
    }

    #[test]
    fn lone_frame_at_10m_decodes_and_200m_does_not() {
        let p = mean_channel();
        let mut m = Medium::new(&p, 3);
        m.start_tx(1, 0, &[0.0, link(&p, 10.0), link(&p, 200.0)], &[false, true, true]);
        assert_eq!(m.end_tx(1), vec![1]);
    }

    #[test]
    fn equal_power_overlap_loses_both() {
        let p = mean_channel();
        let mut m = Medium::new(&p, 3);
        let at = link(&p, 10.0);
        m.start_tx(1, 0, &[0.0, f64::NEG_INFINITY, at], &[false, false, true]);
        m.start_tx(2, 1, &[f64::NEG_INFINITY, 0.0, at], &[false, false, true]);
        assert!(m.end_tx(1).is_empty());
        assert!(m.end_tx(2).is_empty());
    }

    #[test]
    fn stronger_frame_is_captured_in_either_order() {
        let p = mean_channel();
        let strong = link(&p, 3.0);
        let weak = link(&p, 30.0);
        for order in [[0usize, 1], [1, 0]] {
            let mut m = Medium::new(&p, 3);
            let powers = [strong, weak];
            for (k, s) in order.iter().enumerate() {
                let mut rx = [f64::NEG_INFINITY; 3];
                rx[2] = powers[*s];
                m.start_tx(k as u64, *s, &rx, &[false, false, true]);
            }
            let mut decoded = Vec::new();
            for (k, s) in order.iter().enumerate() {
                if m.end_tx(k as u64).contains(&2) {
                    decoded.push(*s);
                }
            }
            assert_eq!(decoded, vec![0], "order {order:?}");
        }
    }

    #[test]
    fn sensing_sums_active_power() {
        let p = mean_channel();
        let mut m = Medium::new(&p, 3);
        assert_eq!(m.sensed_dbm(2), f64::NEG_INFINITY);
        m.start_tx(1, 0, &[0.0, -80.0, -80.0], &[false, true, true]);
        m.start_tx(2, 1, &[-80.0, 0.0, -80.0], &[false, false, true]);
        assert!((m.sensed_dbm(2) - (-80.0 + 10.0 * 2f64.log10())).abs() < 1e-9);
        m.end_tx(1);
        m.end_tx(2);
        assert_eq!(m.active_count(), 0);
    }
}
