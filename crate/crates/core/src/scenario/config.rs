//! Scenario files: TOML (`key = value` lines under `[section]` headers).
//!
//! ```toml
//! name = "congested-100"
//! protocol = "ours"
//! duration = 200.0
//! trials = 20
//! seed = 7
//!
//! [topology]
//! nodes = 100
//! side = 200.0
//!
//! [traffic]
//! profile = "congested"
//! ```
//!
//! See `scenarios/README.md` in the repository for every key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Profile;
use crate::rules::{CompatibilityMatrix, DynamicRuleConfig, StaticRuleConfig};
use crate::sim::engine::Protocol;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    At { line: usize, msg: String },
    #[error("{0}")]
    General(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

impl ConfigError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::At { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_protocol")]
    pub protocol: String,
    pub duration: f64,
    #[serde(default = "one")]
    pub trials: u32,
    #[serde(default)]
    pub seed: u64,
    /// Write `trace.log` per trial.
    #[serde(default = "yes")]
    pub trace: bool,
    pub topology: TopologySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radio: Option<RadioSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app: Option<AppSection>,
}

fn default_protocol() -> String {
    "ours".into()
}
fn one() -> u32 {
    1
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    /// Product count, sink excluded. Ignored when `positions` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    /// Square side in meters.
    #[serde(default = "default_side")]
    pub side: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sink: Option<[f64; 2]>,
    /// Explicit product positions; product `i` (1-based) is entry `i - 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
}

fn default_side() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub profile: String,
    #[serde(default = "default_warmup")]
    pub warmup: f64,
    #[serde(default = "default_warmup")]
    pub cooldown: f64,
}

fn default_warmup() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub densities: Vec<usize>,
    pub profiles: Vec<String>,
    pub protocols: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_power_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sink_tx_power_dbm: Option<f64>,
    /// `ideal` or `radio`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downlink: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_loss_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pl_d0_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_floor_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinr_threshold_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cca_threshold_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_margin_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info_window: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSection {
    /// Compatibility matrix file, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<String>,
    /// Inline matrix, `[[A, B, "incompatible"], ...]`, instead of a file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<[String; 3]>>,
    /// Symbol handed out to products without their own.
    pub symbol: String,
    pub rules: RulesSection,
    #[serde(default, rename = "product", skip_serializing_if = "Vec::is_empty")]
    pub products: Vec<ProductSection>,
    #[serde(default, rename = "query", skip_serializing_if = "Vec::is_empty")]
    pub queries: Vec<QuerySection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulesSection {
    pub v_min: f64,
    pub v_max: f64,
    pub delta_v: f64,
    pub t_cr: f64,
    pub n_c: u32,
    pub d_min: f64,
    pub delta_d: f64,
    pub gre_period: f64,
    pub sample_period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductSection {
    pub id: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol: Option<String>,
    /// What the product reports at registration: NCF0 (nothing installed),
    /// NCF1 (symbols installed) or NCF2 (rules installed).
    #[serde(default = "default_flavor")]
    pub preinstalled: String,
    #[serde(default)]
    pub start: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub depart: f64,
}

fn default_flavor() -> String {
    "NCF0".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySection {
    pub at: f64,
    pub target: u16,
    /// `config`, `rules` or `ambient`.
    pub query: String,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line of the first `key =` assignment inside `section`, or before any
/// header when `section` is `None`.
fn key_line(src: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut in_section = section.is_none();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_matches(|c| c == '[' || c == ']').trim();
            in_section = section == Some(name);
            continue;
        }
        if in_section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn at(src: &str, section: Option<&str>, key: &str, msg: String) -> ConfigError {
    match key_line(src, section, key) {
        Some(line) => ConfigError::At { line, msg },
        None => ConfigError::General(msg),
    }
}

impl ScenarioConfig {
    /// Parse and validate. `base` resolves relative file references.
    pub fn parse(src: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(src).map_err(|e| {
            let msg = e.message().to_string();
            match e.span() {
                Some(span) => ConfigError::At { line: line_of(src, span.start), msg },
                None => ConfigError::General(msg),
            }
        })?;
        cfg.validate(src, base)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::parse(&src, path.parent()).map_err(|e| match e {
            ConfigError::At { line, msg } => ConfigError::At { line, msg: format!("{}: {msg}", path.display()) },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol.parse().expect("validated protocol")
    }

    pub fn profile(&self) -> Option<Profile> {
        self.traffic.as_ref().map(|t| t.profile.parse().expect("validated profile"))
    }

    /// Product count.
    pub fn n_nodes(&self) -> usize {
        match &self.topology.positions {
            Some(p) => p.len(),
            None => self.topology.nodes.unwrap_or(0),
        }
    }

    /// The matrix, from the inline pairs or the referenced file.
    pub fn matrix(&self, base: Option<&Path>) -> Result<Option<CompatibilityMatrix>, ConfigError> {
        let Some(app) = &self.app else { return Ok(None) };
        if let Some(pairs) = &app.pairs {
            let text: String = pairs.iter().map(|[a, b, r]| format!("{a} {b} {r}\n")).collect();
            return text.parse().map(Some).map_err(|e| ConfigError::General(format!("app.pairs: {e}")));
        }
        let file = app.matrix.as_ref().ok_or_else(|| ConfigError::General("app needs `matrix` or `pairs`".into()))?;
        let path: PathBuf = match base {
            Some(b) => b.join(file),
            None => PathBuf::from(file),
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        text.parse()
            .map(Some)
            .map_err(|e| ConfigError::General(format!("{}: {e}", path.display())))
    }

    fn validate(&self, src: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        if self.protocol.parse::<Protocol>().is_err() {
            return Err(at(src, None, "protocol", format!("unknown protocol `{}` (expected ours or rrr)", self.protocol)));
        }
        if !(self.duration > 0.0) {
            return Err(at(src, None, "duration", "duration must be > 0".into()));
        }
        if self.trials < 1 {
            return Err(at(src, None, "trials", "trials must be >= 1".into()));
        }
        let topo = &self.topology;
        if !(topo.side > 0.0) {
            return Err(at(src, Some("topology"), "side", "side must be > 0".into()));
        }
        if topo.positions.is_none() && topo.nodes.is_none() && self.sweep.is_none() {
            return Err(at(src, Some("topology"), "nodes", "topology needs `nodes` or `positions`".into()));
        }
        if let Some(t) = &self.traffic {
            if t.profile.parse::<Profile>().is_err() {
                return Err(at(src, Some("traffic"), "profile", format!("unknown profile `{}`", t.profile)));
            }
            if t.warmup < 0.0 || t.cooldown < 0.0 {
                return Err(at(src, Some("traffic"), "warmup", "warmup and cooldown must be >= 0".into()));
            }
        }
        if let Some(s) = &self.sweep {
            if s.densities.is_empty() || s.profiles.is_empty() || s.protocols.is_empty() {
                return Err(at(src, Some("sweep"), "densities", "sweep lists must be nonempty".into()));
            }
            if let Some(p) = s.profiles.iter().find(|p| p.parse::<Profile>().is_err()) {
                return Err(at(src, Some("sweep"), "profiles", format!("unknown profile `{p}`")));
            }
            if let Some(p) = s.protocols.iter().find(|p| p.parse::<Protocol>().is_err()) {
                return Err(at(src, Some("sweep"), "protocols", format!("unknown protocol `{p}`")));
            }
        }
        if let Some(r) = &self.radio {
            if let Some(d) = &r.downlink {
                if d != "ideal" && d != "radio" {
                    return Err(at(src, Some("radio"), "downlink", format!("unknown downlink `{d}`")));
                }
            }
            if r.info_window.is_some_and(|w| !(w > 0.0)) {
                return Err(at(src, Some("radio"), "info_window", "info_window must be > 0".into()));
            }
        }
        if let Some(app) = &self.app {
            self.validate_app(app, src, base)?;
        }
        Ok(())
    }

    fn validate_app(&self, app: &AppSection, src: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        if app.matrix.is_some() == app.pairs.is_some() {
            return Err(at(src, Some("app"), "symbol", "app needs exactly one of `matrix` and `pairs`".into()));
        }
        let matrix = self.matrix(base)?.expect("app present");
        let r = &app.rules;
        StaticRuleConfig::new(r.v_min, r.v_max, r.delta_v)
            .map_err(|e| at(src, Some("app.rules"), "v_min", e.to_string()))?;
        DynamicRuleConfig::new(r.t_cr, r.n_c).map_err(|e| at(src, Some("app.rules"), "t_cr", e.to_string()))?;
        if !(r.d_min >= 0.0 && r.delta_d >= 0.0) {
            return Err(at(src, Some("app.rules"), "d_min", "d_min and delta_d must be >= 0".into()));
        }
        if !(r.gre_period > 0.0 && r.sample_period > 0.0) {
            return Err(at(src, Some("app.rules"), "gre_period", "periods must be > 0".into()));
        }
        let mut symbols = vec![&app.symbol];
        symbols.extend(app.products.iter().filter_map(|p| p.symbol.as_ref()));
        if let Some(s) = symbols.into_iter().find(|s| !matrix.contains(s)) {
            let msg = format!("symbol `{s}` is not in the compatibility matrix");
            return Err(match symbol_line(src, s) {
                Some(line) => ConfigError::At { line, msg },
                None => ConfigError::General(msg),
            });
        }
        let n = self.n_nodes();
        let mut seen = std::collections::BTreeSet::new();
        for p in &app.products {
            if p.id == 0 || (self.sweep.is_none() && p.id as usize > n) {
                return Err(ConfigError::General(format!("product id {} outside 1..={n}", p.id)));
            }
            if !seen.insert(p.id) {
                return Err(ConfigError::General(format!("product {} listed twice", p.id)));
            }
            if !["NCF0", "NCF1", "NCF2"].contains(&p.preinstalled.as_str()) {
                return Err(at(src, Some("app.product"), "preinstalled", format!("unknown flavor `{}`", p.preinstalled)));
            }
            if p.start < 0.0 || p.speed < 0.0 || p.depart < 0.0 {
                return Err(ConfigError::General(format!("product {}: negative start, speed or depart", p.id)));
            }
        }
        for q in &app.queries {
            if !["config", "rules", "ambient"].contains(&q.query.as_str()) {
                return Err(at(src, Some("app.query"), "query", format!("unknown query `{}`", q.query)));
            }
            if q.target == 0 || q.target as usize > n {
                return Err(at(src, Some("app.query"), "target", format!("query target {} is not a product", q.target)));
            }
        }
        Ok(())
    }
}

/// Line of the `symbol = "<symbol>"` assignment, wherever it appears.
fn symbol_line(src: &str, symbol: &str) -> Option<usize> {
    let needle = format!("\"{symbol}\"");
    src.lines().position(|l| l.trim().starts_with("symbol") && l.contains(&needle)).map(|i| i + 1)
}
