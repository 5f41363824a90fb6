use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use chemnet_core::metrics::summary_table;
use chemnet_core::scenario::{self, golden, Golden, ScenarioConfig};

#[derive(Parser)]
#[command(name = "chemnet", version, about = "Chemical-warehouse sensor network simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every trial of a scenario and aggregate its metrics.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Run the density/profile/protocol cross product of a scenario.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Run a bundled scenario and check its event order.
    Golden {
        /// registration, temperature-alert or incompatible-approach
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the trace under the output root.
        #[arg(long, env = "CHEMNET_OUT")]
        out: Option<PathBuf>,
    },
    /// Parse and check a scenario without running it.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u32>,
    /// Seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Output root; results go to <out>/<scenario name>/.
    #[arg(long, env = "CHEMNET_OUT", default_value = "out")]
    out: PathBuf,
    #[arg(long, value_parser = ["ours", "rrr"])]
    protocol: Option<String>,
}

fn load(path: &Path, o: &Overrides) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(t) = o.trials {
        if t == 0 {
            bail!("--trials must be >= 1");
        }
        cfg.trials = t;
    }
    if let Some(d) = o.duration {
        if !(d > 0.0) {
            bail!("--duration must be > 0");
        }
        cfg.duration = d;
    }
    if let Some(p) = &o.protocol {
        cfg.protocol = p.clone();
        if let Some(s) = cfg.sweep.as_mut() {
            s.protocols = vec![p.clone()];
        }
    }
    Ok(cfg)
}

fn real_main(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Run { config, opts } => {
            let cfg = load(&config, &opts)?;
            let s = scenario::run_scenario(&cfg, config.parent(), &opts.out)?;
            print!("{}", summary_table(&s.rows));
            println!("{} trial(s) written to {}", s.seeds.len(), s.dir.display());
            Ok(true)
        }
        Cmd::Sweep { config, opts } => {
            let cfg = load(&config, &opts)?;
            let s = scenario::sweep(&cfg, config.parent(), &opts.out)?;
            print!("{}", summary_table(&s.rows));
            let mut ok = true;
            for c in &s.cells {
                if let Err(e) = &c.result {
                    ok = false;
                    eprintln!("cell {} failed: {e}", scenario::run::cell_name(&c.cell));
                }
            }
            println!(
                "{}/{} cell(s) completed, metrics in {}",
                s.cells.iter().filter(|c| c.result.is_ok()).count(),
                s.cells.len(),
                s.dir.join("metrics.csv").display()
            );
            Ok(ok)
        }
        Cmd::Golden { name, seed, out } => {
            let g: Golden = name.parse().map_err(anyhow::Error::msg)?;
            let (trace, verdict) = match golden::run_golden(g, seed) {
                Ok(t) => (t, None),
                Err((t, d)) => (t, Some(d)),
            };
            if let Some(root) = out {
                let dir = root.join(g.name()).join(seed.to_string());
                std::fs::create_dir_all(&dir).with_context(|| dir.display().to_string())?;
                std::fs::write(dir.join("trace.log"), trace.render()).context("writing trace")?;
            }
            match verdict {
                None => {
                    println!("golden {g}: pass");
                    Ok(true)
                }
                Some(d) => {
                    println!("golden {g}: FAIL, {d}");
                    Ok(false)
                }
            }
        }
        Cmd::Validate { config } => {
            let cfg = ScenarioConfig::load(&config)?;
            println!("{}: ok ({} products, {} trial(s))", config.display(), cfg.n_nodes(), cfg.trials);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
