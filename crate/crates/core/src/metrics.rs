//! Delay and loss aggregation over per-packet records.
//!
//! Copies of the same packet `(class, origin, seq)` collapse into one: the
//! packet is delivered if any copy is, and its delay is the first arrival.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::net::TrafficClass;
use crate::sim::engine::Protocol;
use crate::sim::record::{PacketRecord, RecordError};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Profile {
    Congested,
    NotCongested,
}

impl Profile {
    pub const ALL: [Profile; 2] = [Profile::Congested, Profile::NotCongested];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Congested => "congested",
            Profile::NotCongested => "not-congested",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown profile `{s}` (expected congested or not-congested)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub protocol: Protocol,
    pub profile: Profile,
    pub density: usize,
    pub class: TrafficClass,
}

/// Records of one trial plus the cell it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecords {
    pub protocol: Protocol,
    pub profile: Profile,
    pub density: usize,
    pub seed: u64,
    pub records: Vec<PacketRecord>,
}

/// One class of one trial after collapsing copies. Delay sums are kept in
/// integer nanoseconds so that folding order never changes the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TrialSummary {
    pub seed: u64,
    pub generated: u64,
    pub delivered: u64,
    pub delay_sum_ns: u128,
}

impl TrialSummary {
    pub fn lost(&self) -> u64 {
        self.generated - self.delivered
    }

    pub fn loss_ratio(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.lost() as f64 / self.generated as f64
        }
    }

    pub fn mean_delay(&self) -> Option<f64> {
        (self.delivered > 0).then(|| self.delay_sum_ns as f64 / self.delivered as f64 * 1e-9)
    }
}

/// Collapse copies and summarise each class.
pub fn summarize(seed: u64, records: &[PacketRecord]) -> Result<BTreeMap<TrafficClass, TrialSummary>, RecordError> {
    // (class, origin, seq) -> earliest delay
    let mut packets: BTreeMap<(TrafficClass, NodeId, u16), Option<u64>> = BTreeMap::new();
    for r in records {
        r.validate()?;
        let delay = r.delivery.map(|d| d - r.birth);
        let slot = packets.entry((r.class, r.origin, r.seq)).or_insert(None);
        *slot = match (*slot, delay) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }
    let mut out: BTreeMap<TrafficClass, TrialSummary> = BTreeMap::new();
    for ((class, _, _), delay) in packets {
        let s = out.entry(class).or_insert(TrialSummary { seed, generated: 0, delivered: 0, delay_sum_ns: 0 });
        s.generated += 1;
        if let Some(d) = delay {
            s.delivered += 1;
            s.delay_sum_ns += d as u128;
        }
    }
    Ok(out)
}

/// Partial aggregate. Merging is concatenation, so any grouping of trials
/// yields the same rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregate {
    groups: BTreeMap<GroupKey, Vec<TrialSummary>>,
}

impl Aggregate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_trial(&mut self, t: &TrialRecords) -> Result<(), RecordError> {
        for (class, s) in summarize(t.seed, &t.records)? {
            let key = GroupKey { protocol: t.protocol, profile: t.profile, density: t.density, class };
            self.groups.entry(key).or_default().push(s);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: Aggregate) {
        for (k, v) in other.groups {
            self.groups.entry(k).or_default().extend(v);
        }
    }

    pub fn summaries(&self, key: &GroupKey) -> &[TrialSummary] {
        self.groups.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn rows(&self) -> Vec<MetricRow> {
        self.groups
            .iter()
            .map(|(k, v)| {
                let mut v = v.clone();
                v.sort();
                MetricRow::from_summaries(*k, &v)
            })
            .collect()
    }
}

pub fn aggregate(trials: &[TrialRecords]) -> Result<Vec<MetricRow>, RecordError> {
    let mut a = Aggregate::new();
    for t in trials {
        a.add_trial(t)?;
    }
    Ok(a.rows())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub key: GroupKey,
    /// Mean over every delivered packet of every trial, seconds.
    pub mean_delay: f64,
    /// Sample standard deviation of the per-trial mean delays.
    pub delay_std: f64,
    pub loss_ratio: f64,
    /// Sample standard deviation of the per-trial loss ratios.
    pub loss_std: f64,
    pub n_packets: u64,
    pub n_delivered: u64,
    pub n_trials: usize,
    /// Trials with at least one delivery, i.e. those behind `delay_std`.
    pub n_delay_trials: usize,
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl MetricRow {
    pub fn from_summaries(key: GroupKey, s: &[TrialSummary]) -> Self {
        let generated: u64 = s.iter().map(|t| t.generated).sum();
        let delivered: u64 = s.iter().map(|t| t.delivered).sum();
        let delay_ns: u128 = s.iter().map(|t| t.delay_sum_ns).sum();
        let means: Vec<f64> = s.iter().filter_map(TrialSummary::mean_delay).collect();
        let losses: Vec<f64> = s.iter().map(TrialSummary::loss_ratio).collect();
        MetricRow {
            key,
            mean_delay: if delivered == 0 { 0.0 } else { delay_ns as f64 / delivered as f64 * 1e-9 },
            delay_std: sample_std(&means),
            loss_ratio: if generated == 0 { 0.0 } else { (generated - delivered) as f64 / generated as f64 },
            loss_std: sample_std(&losses),
            n_packets: generated,
            n_delivered: delivered,
            n_trials: s.len(),
            n_delay_trials: means.len(),
        }
    }

    /// Standard error of the mean delay across trials.
    pub fn delay_se(&self) -> f64 {
        if self.n_delay_trials == 0 {
            0.0
        } else {
            self.delay_std / (self.n_delay_trials as f64).sqrt()
        }
    }

    pub fn loss_se(&self) -> f64 {
        if self.n_trials == 0 {
            0.0
        } else {
            self.loss_std / (self.n_trials as f64).sqrt()
        }
    }
}

pub const METRICS_HEADER: [&str; 9] =
    ["protocol", "profile", "density", "class", "mean_delay_s", "delay_std_s", "loss_ratio", "n_packets", "n_trials"];

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricRow]) -> Result<(), RecordError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.key.protocol.name().to_string(),
            r.key.profile.name().to_string(),
            r.key.density.to_string(),
            r.key.class.name().to_string(),
            format!("{:.9}", r.mean_delay),
            format!("{:.9}", r.delay_std),
            format!("{:.6}", r.loss_ratio),
            r.n_packets.to_string(),
            r.n_trials.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Fixed-width table for terminals.
pub fn summary_table(rows: &[MetricRow]) -> String {
    let mut s = format!(
        "{:<9} {:<14} {:>7} {:<8} {:>12} {:>12} {:>8} {:>9} {:>6}\n",
        "protocol", "profile", "density", "class", "delay_s", "std_s", "loss", "packets", "trials"
    );
    for r in rows {
        s += &format!(
            "{:<9} {:<14} {:>7} {:<8} {:>12.6} {:>12.6} {:>8.4} {:>9} {:>6}\n",
            r.key.protocol.name(),
            r.key.profile.name(),
            r.key.density,
            r.key.class.name(),
            r.mean_delay,
            r.delay_std,
            r.loss_ratio,
            r.n_packets,
            r.n_trials
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::record::LossCause;

    const S: u64 = 1_000_000_000;

    fn rec(class: TrafficClass, origin: NodeId, seq: u16, birth: u64, delivery: Option<u64>) -> PacketRecord {
        PacketRecord {
            class,
            origin,
            seq,
            birth,
            delivery,
            loss: if delivery.is_none() { Some(LossCause::Channel) } else { None },
            hops: 1,
            path_id: 0,
        }
    }

    fn trial(seed: u64, records: Vec<PacketRecord>) -> TrialRecords {
        TrialRecords { protocol: Protocol::Ours, profile: Profile::Congested, density: 50, seed, records }
    }

    #[test]
    fn nine_of_ten_delivered() {
        let mut rs: Vec<_> = (0..9).map(|i| rec(TrafficClass::Routine, 3, i, 0, Some(S))).collect();
        rs.push(rec(TrafficClass::Routine, 3, 9, 0, None));
        let rows = aggregate(&[trial(1, rs)]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].loss_ratio - 0.1).abs() < 1e-12);
        assert_eq!(rows[0].n_packets, 10);
    }

    #[test]
    fn first_copy_defines_delay() {
        let rs = vec![
            rec(TrafficClass::Alert, 4, 1, 0, Some(1_300_000_000)),
            rec(TrafficClass::Alert, 4, 1, 0, Some(S)),
        ];
        let rows = aggregate(&[trial(1, rs)]).unwrap();
        assert_eq!(rows[0].n_packets, 1);
        assert_eq!(rows[0].mean_delay, 1.0);
        assert_eq!(rows[0].loss_ratio, 0.0);
    }

    #[test]
    fn lost_copy_does_not_hide_delivered_one() {
        let rs = vec![rec(TrafficClass::Alert, 4, 1, 0, None), rec(TrafficClass::Alert, 4, 1, 0, Some(2 * S))];
        let rows = aggregate(&[trial(1, rs)]).unwrap();
        assert_eq!((rows[0].loss_ratio, rows[0].mean_delay), (0.0, 2.0));
    }

    #[test]
    fn malformed_record_is_an_error() {
        let mut r = rec(TrafficClass::Alert, 4, 1, 0, None);
        r.loss = None;
        assert!(aggregate(&[trial(1, vec![r])]).is_err());
    }

    #[test]
    fn std_across_trial_means() {
        let a = trial(1, vec![rec(TrafficClass::Routine, 1, 0, 0, Some(S))]);
        let b = trial(2, vec![rec(TrafficClass::Routine, 1, 0, 0, Some(3 * S))]);
        let rows = aggregate(&[a, b]).unwrap();
        assert_eq!(rows[0].mean_delay, 2.0);
        assert!((rows[0].delay_std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(rows[0].n_trials, 2);
    }

    #[test]
    fn csv_header_and_profile_names() {
        let rows = aggregate(&[trial(1, vec![rec(TrafficClass::Alert, 1, 0, 0, Some(S / 2))])]).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "protocol,profile,density,class,mean_delay_s,delay_std_s,loss_ratio,n_packets,n_trials\n\
             ours,congested,50,alert,0.500000000,0.000000000,0.000000,1,1\n"
        );
        assert_eq!("not-congested".parse::<Profile>(), Ok(Profile::NotCongested));
        assert!("busy".parse::<Profile>().is_err());
    }
}
