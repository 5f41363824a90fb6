//! Acceptance gate. Each criterion is its own test and prints one
//! `criterion N: PASS|FAIL ...` line.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chemnet_core::metrics::{Aggregate, GroupKey, MetricRow, Profile, TrialRecords};
use chemnet_core::net::{flood_gradients, TrafficClass};
use chemnet_core::rules::{
    combine_global, eval_community, eval_static, update_dynamic, Compatibility, CompatibilityMatrix,
};
use chemnet_core::scenario::golden::{run_golden, Golden};
use chemnet_core::scenario::run::{cell_trial_seed, run_cell, run_scenario, Cell};
use chemnet_core::scenario::ScenarioConfig;
use chemnet_core::sim::channel::ChannelParams;
use chemnet_core::sim::engine::{run_trial, Protocol, SimConfig};
use chemnet_core::sim::mobility::Mobility;
use chemnet_core::sim::topology::{generate_topology, is_connected, unit_disk_graph, Area};
use chemnet_core::{CommunityRuleConfig, DynamicRuleConfig, DynamicRuleState, SecurityLevel, StaticRuleConfig};

use SecurityLevel::{B, D, G};

fn report(n: u32, ok: bool, detail: &str) {
    // written to the raw handle so the line survives output capture
    let _ = writeln!(std::io::stderr(), "criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

// ---- oracles ----

/// Static level from an explicit table of intervals.
fn static_oracle(v: f64, lo: f64, hi: f64, dv: f64) -> SecurityLevel {
    // (lower, lower included, upper, upper included, level)
    let table = [
        (f64::NEG_INFINITY, false, lo, false, D),
        (lo, true, lo + dv, false, B),
        (lo + dv, true, hi - dv, true, G),
        (hi - dv, false, hi, true, B),
        (hi, false, f64::INFINITY, false, D),
    ];
    let inside = |&(a, ai, b, bi, _): &(f64, bool, f64, bool, SecurityLevel)| {
        (v > a || (ai && v == a)) && (v < b || (bi && v == b))
    };
    table.iter().find(|i| inside(i)).map(|i| i.4).unwrap_or(D)
}

/// Community level from an explicit table of distance intervals.
fn community_oracle(incompatible: bool, d: f64, d_min: f64, delta_d: f64) -> SecurityLevel {
    if !incompatible {
        return G;
    }
    let table = [(0.0, d_min, D), (d_min, d_min + delta_d, B)];
    for (a, b, level) in table {
        if d >= a && (d < b || (level == B && d == b)) {
            return level;
        }
    }
    G
}

fn global_oracle(ls: [SecurityLevel; 3]) -> SecurityLevel {
    let rank = |l: SecurityLevel| ["G", "B", "D"].iter().position(|s| *s == format!("{l:?}")).unwrap();
    let worst = ls.iter().map(|l| rank(*l)).max().unwrap();
    [G, B, D][worst]
}

/// The dynamic predicate evaluated over the history up to and including `k`.
fn dynamic_oracle(hist: &[(SecurityLevel, f64)], k: usize, t_cr: f64, n_c: u32) -> SecurityLevel {
    let upto = &hist[..=k];
    let mut switches = 0;
    let mut prev = G;
    for (l, _) in upto {
        if prev == G && *l == B {
            switches += 1;
        }
        prev = *l;
    }
    let mut sustained = false;
    for i in 0..upto.len() {
        if upto[i].0 != B {
            continue;
        }
        for j in i..upto.len() {
            if upto[j].0 != B {
                break;
            }
            let episode_start = i == 0 || upto[i - 1].0 != B;
            if episode_start && upto[j].1 - upto[i].1 >= t_cr {
                sustained = true;
            }
        }
    }
    if sustained || switches >= n_c {
        D
    } else {
        upto[k].0
    }
}

fn bfs(adj: &[Vec<usize>]) -> Vec<Option<u8>> {
    let mut d = vec![None; adj.len()];
    d[0] = Some(0u8);
    let mut q = VecDeque::from([0usize]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if d[v].is_none() {
                d[v] = Some(d[u].unwrap() + 1);
                q.push_back(v);
            }
        }
    }
    d
}

#[test]
fn criterion_01_rule_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let lo: f64 = rng.random_range(-50.0..50.0);
        let hi = lo + rng.random_range(0.0..100.0);
        let dv = rng.random_range(0.0..=(hi - lo) / 2.0);
        let v = match rng.random_range(0..4) {
            0 => [lo, hi, lo + dv, hi - dv][rng.random_range(0..4)],
            _ => rng.random_range(lo - 20.0..hi + 20.0),
        };
        let cfg = StaticRuleConfig::new(lo, hi, dv).unwrap();
        if eval_static(v, &cfg).unwrap() != static_oracle(v, lo, hi, dv) {
            mismatches += 1;
        }
    }
    let mut matrix = CompatibilityMatrix::new();
    matrix.set("A", "B", Compatibility::Incompatible);
    matrix.set("A", "C", Compatibility::Compatible);
    let pairs = [("A", "B", true), ("B", "A", true), ("A", "C", false), ("C", "A", false), ("A", "A", false)];
    for _ in 0..10_000 {
        let d_min: f64 = rng.random_range(0.0..20.0);
        let delta_d = rng.random_range(0.0..10.0);
        let d = match rng.random_range(0..4) {
            0 => [d_min, d_min + delta_d][rng.random_range(0..2)],
            _ => rng.random_range(0.0..50.0),
        };
        let (a, b, inc) = pairs[rng.random_range(0..pairs.len())];
        let cfg = CommunityRuleConfig::new(d_min, delta_d, matrix.clone()).unwrap();
        if eval_community(a, b, d, &cfg).unwrap() != community_oracle(inc, d, d_min, delta_d) {
            mismatches += 1;
        }
    }
    let mut triples = 0;
    for a in [G, B, D] {
        for b in [G, B, D] {
            for c in [G, B, D] {
                triples += 1;
                if combine_global(&[a, b, c]).unwrap() != global_oracle([a, b, c]) {
                    mismatches += 1;
                }
            }
        }
    }
    for _ in 0..10_000 {
        let t = [G, B, D].map(|_| [G, B, D][rng.random_range(0..3)]);
        if combine_global(&t).unwrap() != global_oracle(t) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        mismatches == 0 && triples == 27 && elapsed < 1.0,
        &format!("{mismatches} mismatches over 30000 samples + {triples} triples in {elapsed:.3}s"),
    );
}

#[test]
fn criterion_02_dynamic_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut escalations = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=50);
        let t_cr: f64 = rng.random_range(0.5..10.0);
        let n_c = rng.random_range(1..6);
        let cfg = DynamicRuleConfig::new(t_cr, n_c).unwrap();
        let mut now = 0.0;
        let hist: Vec<(SecurityLevel, f64)> = (0..len)
            .map(|_| {
                now += rng.random_range(0.1..2.0);
                let l = match rng.random_range(0..10) {
                    0..=4 => G,
                    5..=8 => B,
                    _ => D,
                };
                (l, now)
            })
            .collect();
        let mut st = DynamicRuleState::new();
        for k in 0..hist.len() {
            let (next, out) = update_dynamic(&st, hist[k].0, hist[k].1, &cfg);
            st = next;
            if out == D && hist[k].0 != D {
                escalations += 1;
            }
            if out != dynamic_oracle(&hist, k, t_cr, n_c) {
                mismatches += 1;
            }
        }
    }
    report(2, mismatches == 0, &format!("{mismatches} mismatches over 1000 histories ({escalations} escalated steps)"));
}

#[test]
fn criterion_03_gradient_equals_bfs() {
    let start = Instant::now();
    let range = ChannelParams::default().mean_decode_range(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut checked, mut wrong, mut attempt) = (0, 0, 0u64);
    while checked < 100 {
        attempt += 1;
        let n = rng.random_range(50..=200);
        let side = (n as f64 * range * range / 4.0).sqrt();
        let pts = generate_topology(n - 1, Area::square(side), Area::square(side).bottom_center(), attempt);
        let adj = unit_disk_graph(&pts, range);
        if !is_connected(&adj) {
            continue;
        }
        checked += 1;
        if flood_gradients(&adj, attempt) != bfs(&adj) {
            wrong += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        3,
        wrong == 0 && elapsed < 10.0,
        &format!("{wrong}/{checked} topologies differ from BFS ({attempt} drawn) in {elapsed:.2}s"),
    );
}

fn congested_100(duration: f64, seed: u64) -> SimConfig {
    let src = include_str!("../../../scenarios/congested-100.toml");
    let mut cfg = ScenarioConfig::parse(src, None).unwrap();
    cfg.duration = duration;
    let cell = Cell { protocol: Protocol::Ours, profile: Some(Profile::Congested), density: 100 };
    chemnet_core::scenario::build_sim(&cfg, None, cell, seed).unwrap()
}

#[test]
fn criterion_04_alert_paths_disjoint() {
    let r = run_trial(&congested_100(200.0, 4), 4);
    let mut by_alert: BTreeMap<(u16, u16), Vec<(u8, BTreeSet<u16>)>> = BTreeMap::new();
    for d in &r.alert_deliveries {
        let inner: BTreeSet<u16> = d.trail[1..d.trail.len() - 1].iter().copied().collect();
        by_alert.entry((d.origin, d.seq)).or_default().push((d.path_id, inner));
    }
    let mut violations = 0;
    let mut multi = 0;
    for copies in by_alert.values() {
        if copies.len() > 1 {
            multi += 1;
        }
        for i in 0..copies.len() {
            for j in i + 1..copies.len() {
                if copies[i].0 != copies[j].0 && !copies[i].1.is_disjoint(&copies[j].1) {
                    violations += 1;
                }
            }
        }
    }
    report(
        4,
        violations == 0 && multi > 0,
        &format!("{violations} violations over {} delivered alerts ({multi} with several copies)", by_alert.len()),
    );
}

// ---- desk-scale comparison (criteria 5 to 7) ----

const DENSITIES: [usize; 3] = [50, 100, 200];
const TRIALS: u32 = 20;

struct Comparison {
    rows: BTreeMap<GroupKey, MetricRow>,
}

impl Comparison {
    fn row(&self, protocol: Protocol, profile: Profile, density: usize, class: TrafficClass) -> &MetricRow {
        &self.rows[&GroupKey { protocol, profile, density, class }]
    }
}

fn comparison() -> &'static Comparison {
    static CELL: OnceLock<Comparison> = OnceLock::new();
    CELL.get_or_init(|| {
        let src = include_str!("../../../scenarios/desk-sweep.toml");
        let mut cfg = ScenarioConfig::parse(src, None).unwrap();
        cfg.trials = TRIALS;
        let mut cells = Vec::new();
        for d in DENSITIES {
            for p in [Protocol::Ours, Protocol::Rrr] {
                cells.push(Cell { protocol: p, profile: Some(Profile::Congested), density: d });
            }
        }
        for p in [Protocol::Ours, Protocol::Rrr] {
            cells.push(Cell { protocol: p, profile: Some(Profile::NotCongested), density: 50 });
        }
        let mut agg = Aggregate::new();
        for cell in cells {
            let profile = cell.profile.unwrap();
            let seeds: Vec<u64> = (0..TRIALS).map(|i| cell_trial_seed(cfg.seed, profile, cell.density, i)).collect();
            for (seed, r) in run_cell(&cfg, None, cell, &seeds).unwrap() {
                agg.add_trial(&TrialRecords {
                    protocol: cell.protocol,
                    profile,
                    density: cell.density,
                    seed,
                    records: r.records,
                })
                .unwrap();
            }
        }
        let rows = agg.rows().into_iter().map(|r| (r.key, r)).collect();
        let c = Comparison { rows };
        for r in c.rows.values() {
            let _ = writeln!(
                std::io::stderr(),
                "  {:<4} {:<13} n={:<3} {:<7} delay={:.4}s±{:.4} loss={:.4}±{:.4} trials={}",
                r.key.protocol.name(),
                r.key.profile.name(),
                r.key.density,
                r.key.class.name(),
                r.mean_delay,
                r.delay_se(),
                r.loss_ratio,
                r.loss_se(),
                r.n_trials
            );
        }
        c
    })
}

fn pooled(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

#[test]
fn criterion_05_delay_ordering() {
    let c = comparison();
    let mut ok = true;
    let mut detail = Vec::new();
    for d in DENSITIES {
        let oa = c.row(Protocol::Ours, Profile::Congested, d, TrafficClass::Alert);
        let ra = c.row(Protocol::Rrr, Profile::Congested, d, TrafficClass::Alert);
        let or = c.row(Protocol::Ours, Profile::Congested, d, TrafficClass::Routine);
        let rr = c.row(Protocol::Rrr, Profile::Congested, d, TrafficClass::Routine);
        let alert_gap = ra.mean_delay - oa.mean_delay;
        let alert_se = pooled(oa.delay_se(), ra.delay_se());
        let routine_gap = or.mean_delay - rr.mean_delay;
        let routine_se = pooled(or.delay_se(), rr.delay_se());
        ok &= alert_gap > alert_se && routine_gap > routine_se;
        detail.push(format!(
            "n={d}: alert rrr-ours={alert_gap:.4}s (se {alert_se:.4}), routine ours-rrr={routine_gap:.4}s (se {routine_se:.4})"
        ));
    }
    report(5, ok, &detail.join("; "));
}

#[test]
fn criterion_06_alert_loss() {
    let c = comparison();
    let mut ok = true;
    let mut detail = Vec::new();
    for d in DENSITIES {
        let oa = c.row(Protocol::Ours, Profile::Congested, d, TrafficClass::Alert);
        let or = c.row(Protocol::Ours, Profile::Congested, d, TrafficClass::Routine);
        let ra = c.row(Protocol::Rrr, Profile::Congested, d, TrafficClass::Alert);
        let vs_routine = or.loss_ratio - oa.loss_ratio;
        let se_routine = pooled(oa.loss_se(), or.loss_se());
        let vs_rrr = ra.loss_ratio - oa.loss_ratio;
        let se_rrr = pooled(oa.loss_se(), ra.loss_se());
        ok &= vs_routine > se_routine && vs_rrr > se_rrr;
        detail.push(format!(
            "n={d}: routine-alert={vs_routine:.4} (se {se_routine:.4}), rrr-ours alert={vs_rrr:.4} (se {se_rrr:.4})"
        ));
    }
    let light = c.row(Protocol::Ours, Profile::NotCongested, 50, TrafficClass::Alert);
    ok &= light.loss_ratio < 0.05;
    detail.push(format!("not-congested n=50 alert loss {:.4}", light.loss_ratio));
    report(6, ok, &detail.join("; "));
}

#[test]
fn criterion_07_routine_delay_grows_with_density() {
    let c = comparison();
    let rows: Vec<&MetricRow> =
        DENSITIES.iter().map(|&d| c.row(Protocol::Ours, Profile::Congested, d, TrafficClass::Routine)).collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for w in rows.windows(2) {
        let se = pooled(w[0].delay_se(), w[1].delay_se());
        ok &= w[1].mean_delay >= w[0].mean_delay - se;
        detail.push(format!(
            "n={}->{}: {:.4}s -> {:.4}s (se {se:.4})",
            w[0].key.density, w[1].key.density, w[0].mean_delay, w[1].mean_delay
        ));
    }
    report(7, ok, &detail.join("; "));
}

#[test]
fn criterion_08_golden_scenarios() {
    let mut failures = Vec::new();
    for g in Golden::ALL {
        for seed in [1, 2, 3, 99, 12345] {
            if let Err((_, d)) = run_golden(g, seed) {
                failures.push(format!("{g} seed {seed}: {d}"));
            }
        }
    }
    report(8, failures.is_empty(), &format!("3 scenarios x 5 seeds, failures: {failures:?}"));
}

#[test]
fn criterion_09_determinism() {
    let src = "name = \"det\"\nduration = 60.0\ntrials = 2\nseed = 9\n\n[topology]\nnodes = 40\nside = 120.0\n\n\
               [traffic]\nprofile = \"congested\"\n";
    let cfg = ScenarioConfig::parse(src, None).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run_scenario(&cfg, None, a.path()).unwrap();
    run_scenario(&cfg, None, b.path()).unwrap();
    let mut compared = 0;
    let mut differ = Vec::new();
    for seed in &sa.seeds {
        for f in ["trace.log", "packets.csv"] {
            let rel = format!("det/{seed}/{f}");
            let x = std::fs::read(a.path().join(&rel)).unwrap();
            let y = std::fs::read(b.path().join(&rel)).unwrap();
            compared += 1;
            if x != y || x.is_empty() {
                differ.push(rel);
            }
        }
    }
    let ma = std::fs::read(a.path().join("det/metrics.csv")).unwrap();
    let mb = std::fs::read(b.path().join("det/metrics.csv")).unwrap();
    if ma != mb {
        differ.push("metrics.csv".into());
    }
    let golden_same = Golden::ALL.iter().all(|g| {
        let x = chemnet_core::scenario::golden::golden_trace(*g, 5).render();
        x == chemnet_core::scenario::golden::golden_trace(*g, 5).render()
    });
    report(
        9,
        differ.is_empty() && golden_same,
        &format!("{compared} trial files + metrics compared, differing: {differ:?}, golden traces identical: {golden_same}"),
    );
}

#[test]
fn criterion_10_energy_ledger() {
    let full = run_trial(&congested_100(200.0, 10), 10);
    let half = run_trial(&congested_100(100.0, 10), 10);
    let initial = SimConfig::new(Protocol::Ours, vec![Mobility::stationary((0.0, 0.0))], 1.0).energy.initial_j;
    let mut worst_rel = 0.0f64;
    let mut increases = 0;
    for (i, (e, h)) in full.energy.iter().zip(&half.energy).enumerate() {
        if i != 0 {
            worst_rel = worst_rel.max((e.consumed - e.expected).abs() / e.expected.max(f64::MIN_POSITIVE));
            if e.remaining > h.remaining || h.remaining > initial || e.consumed < h.consumed {
                increases += 1;
            }
        }
    }
    report(
        10,
        worst_rel <= 1e-9 && increases == 0,
        &format!("worst relative error {worst_rel:.2e}, {increases} ledgers increased over 100 nodes"),
    );
}
