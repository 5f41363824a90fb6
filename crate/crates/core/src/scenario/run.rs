//! Turning scenario files into trials, running them and writing artifacts.

use std::collections::VecDeque;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use super::config::{ConfigError, ScenarioConfig};
use crate::app::sink::{Provision, QueryKind};
use crate::app::{ProductConfig, ProtocolTimers, Ranging, RuleSet, SymbolSet};
use crate::metrics::{Aggregate, MetricRow, Profile, TrialRecords};
use crate::rules::{CompatibilityMatrix, DynamicRuleConfig, StaticRuleConfig};
use crate::sim::engine::{
    run_trial, AppSetup, Downlink, OperatorQuery, ProductSetup, Protocol, SimConfig, TrafficSpec, TrialResult,
};
use crate::sim::mobility::Mobility;
use crate::sim::record::{write_csv, RecordError};
use crate::sim::seed::derive_seed;
use crate::sim::topology::{generate_topology, unit_disk_graph, Area, Point};
use crate::NodeId;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Record(#[from] RecordError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

pub fn traffic_for(profile: Profile, warmup: f64, cooldown: f64) -> TrafficSpec {
    let (routine_rate, alert_rate, alert_sources) = match profile {
        Profile::NotCongested => (0.2, 1.0, 2),
        Profile::Congested => (1.0, 5.0, 4),
    };
    TrafficSpec { routine_rate, alert_rate, alert_sources, warmup, cooldown }
}

/// Longest shortest path (in hops) within the sink's component.
pub fn sink_component_diameter(adj: &[Vec<usize>]) -> usize {
    let hops_from = |s: usize| {
        let mut dist = vec![usize::MAX; adj.len()];
        let mut q = VecDeque::from([s]);
        dist[s] = 0;
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        dist
    };
    if adj.is_empty() {
        return 0;
    }
    let members: Vec<usize> = hops_from(0).iter().enumerate().filter(|(_, d)| **d != usize::MAX).map(|(i, _)| i).collect();
    members
        .iter()
        .map(|&s| hops_from(s).into_iter().filter(|d| *d != usize::MAX).max().unwrap_or(0))
        .max()
        .unwrap_or(0)
}

/// Hop budget for a placement: twice the diameter, at least 4.
pub fn ttl_for(points: &[Point], range: f64) -> u8 {
    let d = sink_component_diameter(&unit_disk_graph(points, range));
    (2 * d).clamp(4, u8::MAX as usize) as u8
}

/// One trial to run: which protocol, under which load, on how many products.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub protocol: Protocol,
    pub profile: Option<Profile>,
    pub density: usize,
}

pub fn trial_seed(master: u64, trial: u32) -> u64 {
    derive_seed(master, &["trial", &trial.to_string()])
}

/// Seed for a sweep trial. Protocols share it so both see the same placement.
pub fn cell_trial_seed(master: u64, profile: Profile, density: usize, trial: u32) -> u64 {
    derive_seed(master, &["trial", profile.name(), &density.to_string(), &trial.to_string()])
}

fn symbol_set(matrix: &CompatibilityMatrix, symbol: &str) -> SymbolSet {
    SymbolSet { symbol: symbol.to_owned(), incompatible: matrix.incompatible_with(symbol) }
}

/// Simulator input for one trial of `cell`.
pub fn build_sim(cfg: &ScenarioConfig, base: Option<&Path>, cell: Cell, seed: u64) -> Result<SimConfig, ConfigError> {
    let area = Area::square(cfg.topology.side);
    let sink = cfg.topology.sink.map(|[x, y]| (x, y)).unwrap_or(area.bottom_center());
    let points: Vec<Point> = match &cfg.topology.positions {
        Some(p) => std::iter::once(sink).chain(p.iter().map(|&[x, y]| (x, y))).collect(),
        None => generate_topology(cell.density, area, sink, derive_seed(seed, &["topology"])),
    };
    let mut nodes: Vec<Mobility> = points.iter().map(|&p| Mobility::stationary(p)).collect();
    let mut sim = SimConfig::new(cell.protocol, Vec::new(), cfg.duration);
    if let Some(r) = &cfg.radio {
        let ch = &mut sim.channel;
        let pl = &mut ch.path_loss;
        pl.exponent = r.path_loss_exponent.unwrap_or(pl.exponent);
        pl.pl_d0 = r.pl_d0_db.unwrap_or(pl.pl_d0);
        ch.sigma_db = r.sigma_db.unwrap_or(ch.sigma_db);
        ch.noise_floor_dbm = r.noise_floor_dbm.unwrap_or(ch.noise_floor_dbm);
        ch.sinr_threshold_db = r.sinr_threshold_db.unwrap_or(ch.sinr_threshold_db);
        ch.cca_threshold_dbm = r.cca_threshold_dbm.unwrap_or(ch.cca_threshold_dbm);
        sim.tx_power_dbm = r.tx_power_dbm.unwrap_or(sim.tx_power_dbm);
        sim.sink_tx_power_dbm = r.sink_tx_power_dbm.unwrap_or(sim.sink_tx_power_dbm);
        sim.link_margin_db = r.link_margin_db.unwrap_or(sim.link_margin_db);
        sim.gradient_period = r.gradient_period.unwrap_or(sim.gradient_period);
        sim.routine.window = r.info_window.unwrap_or(sim.routine.window);
        if r.downlink.as_deref() == Some("radio") {
            sim.downlink = Downlink::Radio;
        }
    }
    let ttl = ttl_for(&points, sim.channel.mean_decode_range(sim.tx_power_dbm));
    sim.routine.ttl = ttl;
    sim.alert.ttl = ttl;
    sim.rrr.ttl = ttl;
    let (warmup, cooldown) = cfg.traffic.as_ref().map(|t| (t.warmup, t.cooldown)).unwrap_or((5.0, 5.0));
    sim.traffic = cell.profile.map(|p| traffic_for(p, warmup, cooldown));
    sim.trace = cfg.trace;

    if let Some(app) = &cfg.app {
        let matrix = cfg.matrix(base)?.expect("app present");
        let r = app.rules;
        let rules = RuleSet {
            static_cfg: StaticRuleConfig::new(r.v_min, r.v_max, r.delta_v).map_err(|e| ConfigError::General(e.to_string()))?,
            dynamic_cfg: DynamicRuleConfig::new(r.t_cr, r.n_c).map_err(|e| ConfigError::General(e.to_string()))?,
            d_min: r.d_min,
            delta_d: r.delta_d,
            gre_period: r.gre_period,
            sample_period: r.sample_period,
        };
        let ranging = Ranging { path_loss: sim.channel.path_loss, tx_power_dbm: sim.tx_power_dbm };
        let mut products = Vec::new();
        let mut overrides = Vec::new();
        for p in &app.products {
            let symbol = p.symbol.as_deref().unwrap_or(&app.symbol);
            let symbols = symbol_set(&matrix, symbol);
            if p.symbol.is_some() {
                overrides.push((p.id, Provision { symbols: symbols.clone(), rules }));
            }
            let config = ProductConfig {
                id: p.id,
                symbols: (p.preinstalled == "NCF1").then(|| symbols.clone()),
                rules: (p.preinstalled == "NCF2").then_some(rules),
                ranging,
                timers: ProtocolTimers::default(),
            };
            products.push(ProductSetup { config, start: p.start, samples: p.samples.clone() });
            if let Some(m) = nodes.get_mut(p.id as usize) {
                m.waypoints = p.waypoints.iter().map(|&[x, y]| (x, y)).collect();
                m.speed = p.speed;
                m.depart = p.depart;
            }
        }
        let queries = app
            .queries
            .iter()
            .map(|q| OperatorQuery {
                at: q.at,
                target: q.target as NodeId,
                query: match q.query.as_str() {
                    "config" => QueryKind::Config,
                    "rules" => QueryKind::Rules,
                    _ => QueryKind::Ambient,
                },
            })
            .collect();
        sim.app = Some(AppSetup {
            provision: Provision { symbols: symbol_set(&matrix, &app.symbol), rules },
            overrides,
            products,
            queries,
        });
    }
    sim.nodes = nodes;
    Ok(sim)
}

/// Run the listed trials of one cell in parallel, in seed order.
pub fn run_cell(
    cfg: &ScenarioConfig,
    base: Option<&Path>,
    cell: Cell,
    seeds: &[u64],
) -> Result<Vec<(u64, TrialResult)>, ConfigError> {
    let sims: Vec<(u64, SimConfig)> =
        seeds.iter().map(|&s| build_sim(cfg, base, cell, s).map(|c| (s, c))).collect::<Result<_, _>>()?;
    Ok(sims.into_par_iter().map(|(s, c)| (s, run_trial(&c, s))).collect())
}

/// Write `trace.log` (when tracing) and `packets.csv` under `dir/<seed>/`.
pub fn write_trial(dir: &Path, seed: u64, result: &TrialResult) -> Result<(), RunError> {
    let d = dir.join(seed.to_string());
    fs::create_dir_all(&d).map_err(io_err(&d))?;
    if result.trace.enabled() {
        let p = d.join("trace.log");
        fs::write(&p, result.trace.render()).map_err(io_err(&p))?;
    }
    let p = d.join("packets.csv");
    let f = fs::File::create(&p).map_err(io_err(&p))?;
    write_csv(io::BufWriter::new(f), &result.records)?;
    Ok(())
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let f = fs::File::create(path).map_err(io_err(path))?;
    crate::metrics::write_metrics_csv(io::BufWriter::new(f), rows)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub seeds: Vec<u64>,
    pub rows: Vec<MetricRow>,
}

/// `run`: every trial of the scenario, then `metrics.csv`. Nothing is
/// written unless the whole scenario validates.
pub fn run_scenario(cfg: &ScenarioConfig, base: Option<&Path>, out_root: &Path) -> Result<RunSummary, RunError> {
    let cell = Cell { protocol: cfg.protocol(), profile: cfg.profile(), density: cfg.n_nodes() };
    let seeds: Vec<u64> = (0..cfg.trials).map(|i| trial_seed(cfg.seed, i)).collect();
    build_sim(cfg, base, cell, seeds[0])?;
    let results = run_cell(cfg, base, cell, &seeds)?;
    let dir = out_root.join(&cfg.name);
    let mut agg = Aggregate::new();
    for (seed, r) in &results {
        write_trial(&dir, *seed, r)?;
        agg.add_trial(&TrialRecords {
            protocol: cell.protocol,
            profile: cell.profile.unwrap_or(Profile::NotCongested),
            density: cell.density,
            seed: *seed,
            records: r.records.clone(),
        })?;
    }
    let rows = agg.rows();
    write_metrics(&dir.join("metrics.csv"), &rows)?;
    Ok(RunSummary { dir, seeds, rows })
}

#[derive(Debug)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: Result<usize, RunError>,
}

#[derive(Debug)]
pub struct SweepSummary {
    pub dir: PathBuf,
    pub rows: Vec<MetricRow>,
    pub cells: Vec<CellOutcome>,
}

pub fn cell_name(cell: &Cell) -> String {
    format!("{}-{}-n{}", cell.protocol, cell.profile.map(|p| p.name()).unwrap_or("idle"), cell.density)
}

/// The cross product of the scenario's sweep lists, in file order.
pub fn sweep_cells(cfg: &ScenarioConfig) -> Vec<Cell> {
    let Some(s) = &cfg.sweep else {
        return vec![Cell { protocol: cfg.protocol(), profile: cfg.profile(), density: cfg.n_nodes() }];
    };
    let mut cells = Vec::new();
    for &density in &s.densities {
        for profile in &s.profiles {
            for protocol in &s.protocols {
                cells.push(Cell {
                    protocol: protocol.parse().expect("validated"),
                    profile: Some(profile.parse().expect("validated")),
                    density,
                });
            }
        }
    }
    cells
}

/// Run every trial of every cell and aggregate. Failing cells are reported
/// and skipped.
pub fn sweep(cfg: &ScenarioConfig, base: Option<&Path>, out_root: &Path) -> Result<SweepSummary, RunError> {
    let dir = out_root.join(&cfg.name);
    let mut agg = Aggregate::new();
    let mut cells = Vec::new();
    for cell in sweep_cells(cfg) {
        let profile = cell.profile.unwrap_or(Profile::NotCongested);
        let seeds: Vec<u64> = (0..cfg.trials).map(|i| cell_trial_seed(cfg.seed, profile, cell.density, i)).collect();
        let outcome = (|| -> Result<usize, RunError> {
            let results = run_cell(cfg, base, cell, &seeds)?;
            let cell_dir = dir.join(cell_name(&cell));
            let mut part = Aggregate::new();
            for (seed, r) in &results {
                write_trial(&cell_dir, *seed, r)?;
                part.add_trial(&TrialRecords {
                    protocol: cell.protocol,
                    profile,
                    density: cell.density,
                    seed: *seed,
                    records: r.records.clone(),
                })?;
            }
            agg.merge(part);
            Ok(results.len())
        })();
        cells.push(CellOutcome { cell, result: outcome });
    }
    let rows = agg.rows();
    write_metrics(&dir.join("metrics.csv"), &rows)?;
    Ok(SweepSummary { dir, rows, cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diameter_of_chain_and_star() {
        let chain = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
        assert_eq!(sink_component_diameter(&chain), 3);
        let star = vec![vec![1, 2, 3], vec![0], vec![0], vec![0], vec![]];
        assert_eq!(sink_component_diameter(&star), 2);
        let pts = [(0.0, 0.0), (10.0, 0.0), (20.0, 0.0), (30.0, 0.0), (40.0, 0.0)];
        assert_eq!(ttl_for(&pts, 12.0), 8);
        assert_eq!(ttl_for(&pts[..2], 12.0), 4);
    }

    #[test]
    fn profiles_map_to_rates() {
        let c = traffic_for(Profile::Congested, 5.0, 5.0);
        assert_eq!((c.routine_rate, c.alert_rate, c.alert_sources), (1.0, 5.0, 4));
        let n = traffic_for(Profile::NotCongested, 5.0, 5.0);
        assert_eq!((n.routine_rate, n.alert_rate, n.alert_sources), (0.2, 1.0, 2));
    }

    #[test]
    fn sweep_seeds_are_shared_across_protocols() {
        assert_eq!(cell_trial_seed(1, Profile::Congested, 50, 0), cell_trial_seed(1, Profile::Congested, 50, 0));
        assert_ne!(cell_trial_seed(1, Profile::Congested, 50, 0), cell_trial_seed(1, Profile::Congested, 100, 0));
        assert_ne!(trial_seed(1, 0), trial_seed(1, 1));
    }
}
