//! `aerogrid` command line. Exit codes: 0 on success, 1 on a runtime
//! failure, 2 on a usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aerogrid_core::booth::Strategy;
use aerogrid_core::config::RunConfig;
use aerogrid_core::pipeline;
use aerogrid_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aerogrid", version, about = "Air-purifier booth placement on an urban grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults are used for anything it omits.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Replaces every seed in the config. AEROGRID_SEED wins over this.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic city's station, site and auxiliary files.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Build the six channel grids from station and site data.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Re-verify that the fused AQI field dominates both inputs.
        #[arg(long)]
        self_check: bool,
    },
    /// Train the PPO policy on ingested channels.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding the channel CSVs (defaults to the output directory).
        /// Directory holding the channel CSVs (defaults to the output directory).
        #[arg(long)]
        channels: Option<PathBuf>,
        /// Overrides `ppo.total_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Place booths with one strategy.
    Place {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        channels: Option<PathBuf>,
        /// random, greedy or ppo.
        #[arg(long, short)]
        strategy: Strategy,
        /// Trained network, required for the ppo strategy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score one placement file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        channels: Option<PathBuf>,
        /// A placement_<strategy>.json file written by `place`.
        #[arg(long, short)]
        placement: PathBuf,
    },
    /// Score the random, greedy and ppo placements side by side.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        channels: Option<PathBuf>,
        /// Directory holding placement_<strategy>.json files (defaults to the output directory).
        #[arg(long)]
        placements: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.apply_seed_env()?;
    let cfg = cfg.validated()?;
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn dir_or(dir: &Option<PathBuf>, out: &Path) -> PathBuf {
    dir.clone().unwrap_or_else(|| out.to_path_buf())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => {
            let (cfg, out) = load_config(&common)?;
            for p in pipeline::cmd_synth(&cfg, &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Ingest { common, self_check } => {
            let (cfg, out) = load_config(&common)?;
            let s = pipeline::cmd_ingest(&cfg, &out, self_check)?;
            println!(
                "ingested {} stations and {} sites: mean AQI {:.2}, max {:.2}",
                s.stations, s.sites, s.mean_aqi, s.max_aqi
            );
            if s.self_check == Some(true) {
                println!("self-check passed: fused AQI dominates both inputs");
            }
        }
        Command::Train {
            common,
            channels,
            episodes,
        } => {
            let (mut cfg, out) = load_config(&common)?;
            if let Some(n) = episodes {
                cfg.ppo.total_episodes = n;
                cfg = cfg.validated()?;
            }
            let log = pipeline::cmd_train(&cfg, &dir_or(&channels, &out), &out)?;
            if let Some(last) = log.episodes.last() {
                println!(
                    "trained {} episodes; last reward {:.4}",
                    log.episodes.len(),
                    last.reward
                );
            }
        }
        Command::Place {
            common,
            channels,
            strategy,
            checkpoint,
        } => {
            let (cfg, out) = load_config(&common)?;
            let plan = pipeline::cmd_place(&cfg, &dir_or(&channels, &out), strategy, checkpoint.as_deref(), &out)?;
            println!("{} placed {} booths", strategy, plan.booths.len());
        }
        Command::Evaluate {
            common,
            channels,
            placement,
        } => {
            let (cfg, out) = load_config(&common)?;
            let r = pipeline::cmd_evaluate(&cfg, &dir_or(&channels, &out), &placement, &out)?;
            println!("{}", r.to_json()?);
        }
        Command::Compare {
            common,
            channels,
            placements,
        } => {
            let (cfg, out) = load_config(&common)?;
            let reports = pipeline::cmd_compare(&cfg, &dir_or(&channels, &out), &dir_or(&placements, &out), &out)?;
            for r in &reports {
                println!(
                    "{:<7} booths {:>3}  overall improvement {}",
                    r.strategy,
                    r.booths,
                    r.overall_aqi_improvement_pct
                        .map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}%"))
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Diverged { snapshot: Some(p), .. } = &e {
                eprintln!("last good network: {}", p.display());
            }
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
