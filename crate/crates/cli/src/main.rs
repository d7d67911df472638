use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use csvr::market_data::{DATE_FORMAT, QUARTERS_PER_DAY};
use csvr::preprocessing::{write_trajectory_cache, TrajectoryStore};
use csvr::study::metrics::load_metrics;
use csvr::study::{
    build_store, evaluate_forecasts, load_forecasts, run_study, write_evaluation, write_report, write_study_outputs,
    StudyConfig,
};
use csvr::synth::{generate_dataset, load_dataset, panel_days, write_dataset, SynthConfig};

#[derive(Parser)]
#[command(
    name = "csvr",
    version,
    about = "Corrected-kernel SVR forecasting study for intraday electricity prices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic market dataset.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        days: usize,
        #[arg(long)]
        out: PathBuf,
        /// Strength of the predictable price component.
        #[arg(long, default_value_t = 0.3)]
        rho: f64,
        /// First delivery day (YYYY-MM-DD).
        #[arg(long, default_value = "2021-01-04")]
        start: NaiveDate,
    },
    /// Validate a dataset and write per-day price and volume trajectories.
    Prepare {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the forecasting study described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a forecasts file against the naive benchmark.
    Evaluate {
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render rMAE tables and charts from a metrics file.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn prepare(input: &Path, out: &Path) -> Result<()> {
    let data = load_dataset(input).with_context(|| format!("loading {}", input.display()))?;
    let Some((first, n_days)) = panel_days(&data.exogenous) else {
        bail!("exogenous panel covers no delivery day");
    };
    let quarters: BTreeSet<u8> = (1..=QUARTERS_PER_DAY).collect();
    let store = TrajectoryStore::build(&data.transactions, data.exogenous, first, n_days, &quarters)?;
    let dir = out.join("trajectories");
    fs::create_dir_all(&dir)?;
    for k in 0..store.n_days() {
        let day = store.day(k);
        let mut trajectories = Vec::with_capacity(2 * quarters.len());
        for &q in &quarters {
            let d = store.delivery(day, q)?;
            trajectories.push(d.price.clone());
            trajectories.push(d.volume.clone());
        }
        let path = dir.join(format!("{}.csv", day.format(DATE_FORMAT)));
        let mut w = BufWriter::new(File::create(&path)?);
        write_trajectory_cache(&mut w, &trajectories)?;
        w.flush()?;
    }
    log::info!("wrote {} day files to {}", store.n_days(), dir.display());
    println!(
        "prepared {n_days} days from {first}: {} transactions",
        data.transactions.len()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Generate {
            seed,
            days,
            out,
            rho,
            start,
        } => {
            let cfg = SynthConfig {
                seed,
                n_days: days,
                rho,
                start,
                ..SynthConfig::default()
            };
            let data = generate_dataset(&cfg);
            write_dataset(&data, &out).with_context(|| format!("writing {}", out.display()))?;
            println!("generated {days} days, {} transactions", data.transactions.len());
        }
        Command::Prepare { input, out } => prepare(&input, &out)?,
        Command::Run { config, data, out } => {
            let cfg = StudyConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            let dataset = load_dataset(&data).with_context(|| format!("loading {}", data.display()))?;
            let store = build_store(&cfg, &dataset.transactions, dataset.exogenous)?;
            let output = run_study(&cfg, &store)?;
            write_study_outputs(&out, &output)?;
            let fallbacks = output.forecasts.iter().filter(|r| !r.fallback.is_none()).count();
            println!(
                "wrote {} forecasts ({fallbacks} flagged) to {}",
                output.forecasts.len(),
                out.display()
            );
        }
        Command::Evaluate { forecasts, out } => {
            let rows = load_forecasts(&forecasts).with_context(|| format!("reading {}", forecasts.display()))?;
            let eval = evaluate_forecasts(&rows)?;
            write_evaluation(&out, &eval)?;
            println!("scored {} cells into {}", eval.metrics.len(), out.display());
        }
        Command::Report { metrics, out } => {
            let rows = load_metrics(&metrics).with_context(|| format!("reading {}", metrics.display()))?;
            let files = write_report(&rows, &out)?;
            println!("wrote {} report files to {}", files.len(), out.display());
        }
    }
    Ok(())
}
