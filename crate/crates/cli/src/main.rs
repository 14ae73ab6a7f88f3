//! `satlink` — run BER sweeps, query the FLOP model, and evaluate the
//! orbit-geometry Doppler maximum from the command line.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use satlink_core::channel::DopplerParams;
use satlink_core::harness::{self, ExperimentConfig, ExportFormat, ReceiverKind};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "satlink",
    version,
    about = "Satellite downlink link-level simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo BER sweep from a JSON experiment configuration.
    Sweep {
        /// Experiment configuration file (JSON, ExperimentConfig fields).
        #[arg(long)]
        config: PathBuf,
        /// Output file for the result records.
        #[arg(long)]
        out: PathBuf,
        /// Output format.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Override the master seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the trial loop (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print the FLOP estimate of one receiver at the given dimensions.
    Flops {
        /// Receiver: ls | mmse | elm | celm | celmah | celm_wlls.
        #[arg(long)]
        variant: String,
        /// Samples per symbol (FFT size).
        #[arg(long)]
        n: usize,
        /// Hidden nodes.
        #[arg(long)]
        l: usize,
        /// Input taps.
        #[arg(long)]
        i: usize,
    },
    /// Print the maximum |Doppler shift| in Hz over a pass window.
    Doppler {
        /// Orbit geometry file (JSON, DopplerParams fields).
        #[arg(long)]
        orbit: PathBuf,
        /// Half-width of the search window in seconds around closest
        /// approach.
        #[arg(long)]
        tmax: f64,
        /// Search grid points.
        #[arg(long, default_value_t = 200_000)]
        grid: usize,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Sweep {
            config,
            out,
            format,
            seed,
            jobs,
        } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg: ExperimentConfig = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", config.display()))?;
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            let format: ExportFormat = format.parse()?;
            let records = match jobs {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .context("building worker pool")?
                    .install(|| harness::run_sweep(&cfg)),
                None => harness::run_sweep(&cfg),
            }?;
            harness::export(&records, format, &out)?;
            println!("wrote {} records to {}", records.len(), out.display());
            Ok(())
        }
        Command::Flops { variant, n, l, i } => {
            let kind: ReceiverKind = variant.parse()?;
            println!("{}", harness::flops_estimate(kind, n, l, i));
            Ok(())
        }
        Command::Doppler { orbit, tmax, grid } => {
            let text = std::fs::read_to_string(&orbit)
                .with_context(|| format!("reading {}", orbit.display()))?;
            let params: DopplerParams = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", orbit.display()))?;
            let max = satlink_core::channel::max_abs_doppler(&params, tmax, grid)?;
            println!("{max:.3}");
            Ok(())
        }
    }
}
