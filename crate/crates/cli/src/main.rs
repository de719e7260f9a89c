#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use config::PipelineConfig;

/// Changepoint-aware analysis of seasonal maximum precipitation.
#[derive(Parser, Debug)]
#[command(name = "precip-cp", version)]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated station ids to restrict the run to
    #[arg(long, global = true, value_delimiter = ',')]
    stations: Vec<String>,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse .dly files, apply QC, extract seasonal maxima and screen stations
    Ingest {
        /// Directory of .dly files; overrides `data_dir`
        data_dir: Option<PathBuf>,
    },
    /// Changepoint search, GEV fits, trends and return levels per station
    Analyze,
    /// Trend tables, with/without changepoint comparison, changepoint histogram
    Trends,
    /// Return level table and Q-Q files
    Returns,
    /// Krige one station-level quantity onto a grid
    Smooth {
        #[arg(long, value_enum)]
        quantity: Quantity,
    },
    /// Summary of a completed run
    Report,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Trend,
    Z,
    Variability,
    LongTerm,
    ReturnLevel,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Trend => "trend",
            Quantity::Z => "z",
            Quantity::Variability => "variability",
            Quantity::LongTerm => "long-term",
            Quantity::ReturnLevel => "return-level",
        }
    }
}

/// Whether every unit of work succeeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    Partial,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Command::Ingest { data_dir: Some(dir) } = &cli.command {
        cfg.data_dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Status> {
    let cfg = load_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().context("building worker pool")?;
    let filter = &cli.stations;
    pool.install(|| match &cli.command {
        Command::Ingest { .. } => commands::ingest(&cfg, filter),
        Command::Analyze => commands::analyze(&cfg, filter),
        Command::Trends => commands::trends(&cfg, filter),
        Command::Returns => commands::returns(&cfg, filter),
        Command::Smooth { quantity } => commands::smooth(&cfg, filter, *quantity),
        Command::Report => commands::report(&cfg, filter),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Complete) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
