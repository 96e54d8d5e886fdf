use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use slowfast::data::{drift_report, write_drift_csv};
use slowfast::harness::{
    self, BenchConfig, ExperimentConfig, Method, Prepared, SweepParam, ENV_PREFIX,
};
use slowfast::model::{embed, Checkpoint};
use slowfast::sketch::ErrorSketch;

#[derive(Parser)]
#[command(
    name = "slowfast",
    version,
    about = "Streaming error compensation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base model and save a checkpoint.
    Train {
        #[arg(short, long)]
        config: PathBuf,
        /// Checkpoint path; defaults to `[output] checkpoint`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Stream the test slots through every configured method.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Start from a saved model instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Results CSV; defaults to `[output] results`, else stdout.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Diagnostics JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Sketch snapshot of the compensating memory at the end of the run.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Rerun the stream for each value of one parameter.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
        /// lambda, K_arrays, L_bits, tau, gamma or sigma.
        #[arg(short, long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(short, long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output CSV; stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Measure sketch throughput at increasing fill levels.
    Bench {
        #[arg(long, default_value_t = BenchConfig::default().dim)]
        dim: usize,
        #[arg(long, default_value_t = BenchConfig::default().bits_per_hash)]
        bits: u32,
        #[arg(long, default_value_t = BenchConfig::default().num_arrays)]
        arrays: usize,
        #[arg(long, value_delimiter = ',', default_values_t = BenchConfig::default().fill_levels)]
        levels: Vec<usize>,
        #[arg(long, default_value_t = BenchConfig::default().batch)]
        batch: usize,
    },
    /// Per-slot shift diagnostics of the test stream.
    DriftReport {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print the header and mass of a sketch snapshot.
    Snapshot { file: PathBuf },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, out } => {
            let cfg = load(&config)?;
            let path = out
                .or_else(|| cfg.output.checkpoint.clone())
                .context("no checkpoint path: pass --out or set [output] checkpoint")?;
            let prepared = harness::train(&cfg)?;
            prepared.checkpoint(&cfg).save(&path)?;
            log::info!("saved {}", path.display());
        }
        Command::Run {
            config,
            checkpoint,
            results,
            trace,
            snapshot,
        } => {
            let mut cfg = load(&config)?;
            let to_stdout = results.is_none() && cfg.output.results.is_none();
            if results.is_some() {
                cfg.output.results = results;
            }
            if trace.is_some() {
                cfg.output.trace = trace;
            }
            if snapshot.is_some() {
                cfg.output.snapshot = snapshot;
            }
            let prepared = prepare(&cfg, checkpoint.as_deref())?;
            let results = harness::run_and_write(&prepared, &cfg)?;
            if to_stdout {
                io::stdout().write_all(results.to_csv()?.as_bytes())?;
            }
            let n = prepared.slots.len();
            for &m in &results.methods {
                log::info!(
                    "{m}: mean auc {:.4}, mean gauc {:.4}",
                    results.mean(m, 0..n, |s| s.auc),
                    results.mean(m, 0..n, |s| s.gauc)
                );
            }
        }
        Command::Sweep {
            config,
            param,
            values,
            checkpoint,
            out,
        } => {
            let cfg = load(&config)?;
            let prepared = prepare(&cfg, checkpoint.as_deref())?;
            let points = harness::sweep(&prepared, &cfg, param, &values)?;
            emit(out.as_deref(), &harness::sweep_csv(param, &points)?)?;
            let mut base = cfg.clone();
            base.methods.run = vec![Method::Frozen];
            let frozen = harness::run_stream(&prepared, &base, None)?;
            let n = prepared.slots.len();
            log::info!(
                "frozen baseline: gauc {}, auc {}",
                frozen.mean(Method::Frozen, 0..n, |s| s.gauc),
                frozen.mean(Method::Frozen, 0..n, |s| s.auc)
            );
        }
        Command::Bench {
            dim,
            bits,
            arrays,
            levels,
            batch,
        } => {
            let report = harness::bench(&BenchConfig {
                dim,
                bits_per_hash: bits,
                num_arrays: arrays,
                fill_levels: levels,
                batch,
                ..Default::default()
            })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::DriftReport {
            config,
            checkpoint,
            out,
        } => {
            let cfg = load(&config)?;
            let prepared = prepare(&cfg, checkpoint.as_deref())?;
            let report = drift_report(&prepared.slots, &prepared.schema, |row| {
                embed(&prepared.schema, &prepared.model, row)
            })?;
            let mut buf = Vec::new();
            write_drift_csv(&mut buf, &report)?;
            emit(out.as_deref(), std::str::from_utf8(&buf)?)?;
        }
        Command::Snapshot { file } => {
            let bytes = fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let params = ErrorSketch::snapshot_params(&bytes)?;
            let sketch = ErrorSketch::restore(&bytes, params)?;
            let summary = serde_json::json!({
                "params": params,
                "footprint_bytes": sketch.footprint_bytes(),
                "records": sketch.writes_accepted(),
                "totals_consistent": sketch.audit(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)
        .with_context(|| format!("loading {} (with {ENV_PREFIX}* overrides)", path.display()))
}

fn prepare(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Prepared> {
    match checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.config != cfg.model {
                log::warn!("checkpoint model config differs from [model]; using the checkpoint");
            }
            Ok(harness::prepare_from_checkpoint(cfg, ck)?)
        }
        None => Ok(harness::train(cfg)?),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}
