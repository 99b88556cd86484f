use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use molisac::cir::write_cir_csv;
use molisac::harness::{sweep, validate_channels, write_sweep_csv, Experiment, ExperimentConfig, MetricsSummary, SweepAxis};

#[derive(Debug, Parser)]
#[command(name = "molisac", version, about = "Molecular joint sensing and detection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed of the configuration
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dump the CIR of every configured distance as CSV
    Cir {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured detector and write metrics as JSON
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep release amplitude, pilot length or iteration index
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of ntx, pilot, iteration
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check channel matrices and CIRs for every configured distance
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Serialize)]
struct SimulationReport<'a> {
    master_seed: u64,
    true_distance: f64,
    mismatched_distance: f64,
    noise: bool,
    cir_horizon: usize,
    metrics: &'a MetricsSummary,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Cir { common, out } => {
            let exp = Experiment::prepare(load(&common)?)?;
            let tables: Vec<_> = exp.cir_tables().iter().map(|t| (**t).clone()).collect();
            write_cir_csv(create(&out)?, &tables)?;
            eprintln!(
                "[cir] wrote {} tables (horizon {}) to {}",
                tables.len(),
                exp.horizon,
                out.display()
            );
        }
        Command::Simulate { common, out } => {
            let cfg = load(&common)?;
            let exp = Experiment::prepare(cfg.clone())?;
            let point = exp.default_point()?;
            let metrics = exp.run(&point, cfg.detector_mode)?;
            let report = SimulationReport {
                master_seed: cfg.master_seed,
                true_distance: cfg.true_distance,
                mismatched_distance: cfg.mismatched_distance,
                noise: cfg.noise,
                cir_horizon: exp.horizon,
                metrics: &metrics,
            };
            let mut writer = create(&out)?;
            serde_json::to_writer_pretty(&mut writer, &report)?;
            writer.write_all(b"\n")?;
            writer.flush()?;
            let last = metrics.iterations.last().expect("at least iteration 0");
            eprintln!(
                "[simulate] {} trials, mode {}: P_acc = {:.4}, BER = {:.3e} (iteration {})",
                metrics.trials,
                metrics.detector_mode.as_str(),
                last.p_acc,
                last.ber,
                last.iteration
            );
        }
        Command::Sweep { common, axis, out } => {
            let rows = sweep(&load(&common)?, axis)?;
            write_sweep_csv(create(&out)?, &rows)?;
            eprintln!("[sweep] {} points on axis {} -> {}", rows.len(), axis.as_str(), out.display());
        }
        Command::Validate { common } => {
            let report = validate_channels(&load(&common)?)?;
            println!("horizon {} steps", report.horizon);
            for check in &report.checks {
                println!(
                    "{} d = {:.1} um (r = {}): matrix {}, cir in [0,1] {}, dead time {}, mass error {:.2e}, tail/peak {:.2e}",
                    if check.passed() { "PASS" } else { "FAIL" },
                    check.distance * 1e6,
                    check.receiver_index,
                    if check.matrix_violations.is_empty() { "ok" } else { "violated" },
                    check.cir_in_unit_interval,
                    check.dead_time_holds,
                    check.mass_error,
                    check.tail_ratio,
                );
                for v in &check.matrix_violations {
                    println!("    {v}");
                }
            }
            if !report.passed() {
                bail!("channel invariant checks failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
