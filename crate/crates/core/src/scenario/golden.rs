//! Scripted application scenarios and their expected event order.
//!
//! Expectations name trace events, nodes and attributes only, never times,
//! so any seed has to reproduce them.

use std::fmt;
use std::str::FromStr;

use super::config::ScenarioConfig;
use super::run::{build_sim, trial_seed, Cell};
use crate::sim::engine::run_trial;
use crate::sim::trace::{Trace, TraceLine};
use crate::NodeId;

pub const REGISTRATION: &str = include_str!("../../../../scenarios/registration.toml");
pub const TEMPERATURE_ALERT: &str = include_str!("../../../../scenarios/temperature-alert.toml");
pub const INCOMPATIBLE_APPROACH: &str = include_str!("../../../../scenarios/incompatible-approach.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Golden {
    Registration,
    TemperatureAlert,
    IncompatibleApproach,
}

impl Golden {
    pub const ALL: [Golden; 3] = [Golden::Registration, Golden::TemperatureAlert, Golden::IncompatibleApproach];

    pub fn name(self) -> &'static str {
        match self {
            Golden::Registration => "registration",
            Golden::TemperatureAlert => "temperature-alert",
            Golden::IncompatibleApproach => "incompatible-approach",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Golden::Registration => REGISTRATION,
            Golden::TemperatureAlert => TEMPERATURE_ALERT,
            Golden::IncompatibleApproach => INCOMPATIBLE_APPROACH,
        }
    }

    pub fn config(self) -> ScenarioConfig {
        ScenarioConfig::parse(self.source(), None).expect("bundled golden scenario is valid")
    }

    pub fn expectations(self) -> Vec<Expect> {
        match self {
            Golden::Registration => [(1, "NCF0", &["CMD1", "CMD3"][..]), (2, "NCF1", &["CMD3"]), (3, "NCF2", &["CMD1"])]
                .into_iter()
                .map(|(p, ncf, cmds)| {
                    let mut steps = vec![
                        Step::new(p, "SENT").kind("CTR").to(0),
                        Step::new(0, "RECV").kind("CTR").from(p),
                        Step::new(0, "REGISTERED").with("product", &p.to_string()),
                        Step::new(0, "SENT").kind("ACKCTR").to(p),
                        Step::new(p, "RECV").kind("ACKCTR").from(0),
                        Step::new(p, "SENT").kind(ncf).to(0),
                        Step::new(0, "RECV").kind(ncf).from(p),
                    ];
                    for c in cmds {
                        steps.push(Step::new(0, "SENT").kind(c).to(p));
                    }
                    for c in cmds {
                        steps.push(Step::new(p, "RECV").kind(c).from(0));
                    }
                    steps.push(Step::new(p, "CONFIGURED"));
                    Expect::Order(steps)
                })
                .collect(),
            Golden::TemperatureAlert => vec![
                Expect::Order(vec![
                    Step::new(3, "CONFIGURED"),
                    Step::new(3, "SAMPLE").with("value", "7"),
                    Step::new(3, "SAMPLE").with("value", "9"),
                    Step::new(3, "SAMPLE").with("value", "11"),
                    Step::new(3, "SAMPLE").with("value", "13"),
                    Step::new(3, "SAMPLE").with("value", "15").with("vmax", "14"),
                    Step::new(3, "SENT").kind("ALE").to(0),
                    Step::new(0, "RECV").kind("ALE").from(3),
                    Step::new(0, "ALERT").with("product", "3").with("level", "D"),
                    Step::new(0, "SENT").kind("ACKALE").to(3),
                    Step::new(3, "RECV").kind("ACKALE").from(0),
                ]),
                Expect::FirstAfter {
                    event: Step::new(3, "SENT").kind("ALE"),
                    after: Step::new(3, "SAMPLE").with("value", "15"),
                },
            ],
            Golden::IncompatibleApproach => vec![
                Expect::Order(vec![
                    Step::new(3, "SENT").kind("GRE").to_all(),
                    Step::new(6, "RECV").kind("GRE").from(3),
                    Step::new(6, "SENT").kind("RSI").to(3),
                    Step::new(3, "RECV").kind("RSI").from(6),
                    Step::new(3, "DISTANCE").with("peer", "6").with("level", "B"),
                    Step::new(3, "SENT").kind("ALE").to(0),
                    Step::new(0, "ALERT").with("product", "3").with("level", "B"),
                    Step::new(3, "RECV").kind("ACKALE").from(0),
                    Step::new(3, "DISTANCE").with("peer", "6").with("level", "D"),
                    Step::new(3, "SENT").kind("ALE").to(0),
                    Step::new(0, "ALERT").with("product", "3").with("level", "D"),
                    Step::new(3, "RECV").kind("ACKALE").from(0),
                ]),
                Expect::FirstAfter {
                    event: Step::new(0, "ALERT").with("product", "3").with("level", "D"),
                    after: Step::new(0, "ALERT").with("product", "3").with("level", "B"),
                },
            ],
        }
    }
}

impl fmt::Display for Golden {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Golden {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Golden::ALL.into_iter().find(|g| g.name() == s).ok_or_else(|| {
            format!("unknown scenario `{s}` (expected registration, temperature-alert or incompatible-approach)")
        })
    }
}

/// Pattern over one trace line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub node: NodeId,
    pub event: &'static str,
    pub attrs: Vec<(&'static str, String)>,
}

impl Step {
    pub fn new(node: NodeId, event: &'static str) -> Self {
        Self { node, event, attrs: Vec::new() }
    }

    pub fn with(mut self, key: &'static str, value: &str) -> Self {
        self.attrs.push((key, value.to_owned()));
        self
    }

    fn kind(self, k: &str) -> Self {
        self.with("kind", k)
    }

    fn to(self, n: NodeId) -> Self {
        self.with("to", &n.to_string())
    }

    fn to_all(self) -> Self {
        self.with("to", "all")
    }

    fn from(self, n: NodeId) -> Self {
        self.with("from", &n.to_string())
    }

    pub fn matches(&self, l: &TraceLine) -> bool {
        l.node == self.node && l.event == self.event && self.attrs.iter().all(|(k, v)| l.attr(k) == Some(v.as_str()))
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node={} {}", self.node, self.event)?;
        for (k, v) in &self.attrs {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expect {
    /// The steps occur in this order, other lines may sit in between.
    Order(Vec<Step>),
    /// The first `event` line comes after the first `after` line.
    FirstAfter { event: Step, after: Step },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    /// Which expectation failed.
    pub expectation: usize,
    pub message: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "expectation {}: {}", self.expectation + 1, self.message)
    }
}

/// Check every expectation; report the first that fails.
pub fn check(trace: &[TraceLine], expects: &[Expect]) -> Result<(), Divergence> {
    for (i, e) in expects.iter().enumerate() {
        let fail = |message: String| Err(Divergence { expectation: i, message });
        match e {
            Expect::Order(steps) => {
                let mut pos = 0;
                let mut last: Option<&TraceLine> = None;
                for (j, s) in steps.iter().enumerate() {
                    match trace[pos..].iter().position(|l| s.matches(l)) {
                        Some(k) => {
                            last = Some(&trace[pos + k]);
                            pos += k + 1;
                        }
                        None => {
                            let after = last.map(|l| format!(" after `{l}`")).unwrap_or_default();
                            return fail(format!("step {} `{s}` not found{after}", j + 1));
                        }
                    }
                }
            }
            Expect::FirstAfter { event, after } => {
                let first_event = trace.iter().position(|l| event.matches(l));
                let first_after = trace.iter().position(|l| after.matches(l));
                match (first_event, first_after) {
                    (Some(a), Some(b)) if a > b => {}
                    (Some(a), Some(_)) => return fail(format!("`{}` happened before `{after}`", trace[a])),
                    (None, _) => return fail(format!("`{event}` never happened")),
                    (Some(_), None) => return fail(format!("`{after}` never happened")),
                }
            }
        }
    }
    Ok(())
}

/// Run the bundled scenario with `seed` and return its trace.
pub fn golden_trace(g: Golden, seed: u64) -> Trace {
    let cfg = g.config();
    let cell = Cell { protocol: cfg.protocol(), profile: cfg.profile(), density: cfg.n_nodes() };
    let s = trial_seed(seed, 0);
    let sim = build_sim(&cfg, None, cell, s).expect("bundled golden scenario builds");
    run_trial(&sim, s).trace
}

pub fn run_golden(g: Golden, seed: u64) -> Result<Trace, (Trace, Divergence)> {
    let trace = golden_trace(g, seed);
    match check(trace.lines(), &g.expectations()) {
        Ok(()) => Ok(trace),
        Err(d) => Err((trace, d)),
    }
}
