//! `epmud`: runs Monte Carlo sweeps described by a flat config file and
//! writes one CSV row per (sweep value, algorithm).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use epmud::harness::{read_config_map, run_sweep, write_csv, ConfigMap, KNOWN_KEYS};

#[derive(Debug, Parser)]
#[command(name = "epmud", version, about = "Grant-free access detection and estimation sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the sweep described by a config file.
    Run {
        /// Config file; all keys take defaults when omitted.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Override one config key, e.g. `--set sweep.values=0,10,20`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Master seed (same as `--set seed=N`).
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path (same as `--set sweep.output=PATH`).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(short, long, env = "EPMUD_THREADS", default_value_t = 0)]
        threads: usize,
    },
    /// List every recognised config key.
    Keys,
}

fn run(config: Option<PathBuf>, overrides: &[String], seed: Option<u64>, out: Option<PathBuf>, threads: usize) -> Result<bool> {
    let mut map = match &config {
        Some(path) => read_config_map(path)?,
        None => ConfigMap::default(),
    };
    for pair in overrides {
        map.set_pair(pair).with_context(|| format!("bad --set `{pair}`"))?;
    }
    if let Some(seed) = seed {
        map.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &out {
        map.set("sweep.output", &out.to_string_lossy())?;
    }
    let spec = map.into_spec().context("invalid configuration")?;

    let start = Instant::now();
    let report = run_sweep(&spec, threads)?;
    write_csv(&report.rows, &spec.output_path)?;
    eprintln!(
        "wrote {} rows to {} in {:.1?}",
        report.rows.len(),
        spec.output_path.display(),
        start.elapsed()
    );
    for f in &report.failures {
        eprintln!(
            "error: point {}={} aborted at trial {} ({}): {}",
            spec.variable, f.value, f.trial, f.algorithm, f.message
        );
    }
    Ok(report.failures.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides, seed, out, threads } => run(config, &overrides, seed, out, threads),
        Command::Keys => {
            KNOWN_KEYS.iter().for_each(|k| println!("{k}"));
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
