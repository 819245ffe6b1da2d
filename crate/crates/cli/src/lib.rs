//! `geobridge` command line.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 usage or validation
//! error. [`run`] is the whole program and is what the integration tests call.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, missing or malformed inputs.
    #[error("{0}")]
    Usage(String),
    /// Filesystem failures and runs that cannot complete.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "geobridge",
    version,
    about = "Tri-view geo-localization dataset and retrieval tools"
)]
pub struct Cli {
    /// TOML file with default values for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Slide a window over a drone raster and write seed points.
    Seed(SeedArgs),
    /// Harvest, crop, screen, gate, dedup and align into a manifest.
    Build(BuildArgs),
    /// Train linear encoders on synthetic tri-view data.
    TrainToy(TrainArgs),
    /// Rank query embeddings against a gallery and report metrics.
    Eval(EvalArgs),
    /// Run the quality-gate cascade on one image.
    GateReport(GateArgs),
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    /// Drone raster (PNG or JPEG).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Sidecar JSON with raster_id, transform, country and split.
    #[arg(long)]
    pub transform: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<u32>,
    /// Defaults to the window size.
    #[arg(long)]
    pub stride: Option<u32>,
    /// Seeds JSONL to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Drone raster the seeds were generated from.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub transform: Option<PathBuf>,
    /// Seeds JSONL written by `seed`.
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    /// Window used for seeding; sets the panorama search coverage.
    #[arg(long)]
    pub window: Option<u32>,
    /// Comma-separated coverage scales in meters.
    #[arg(long)]
    pub scales: Option<String>,
    /// key=value gate thresholds file.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Fixture provider directory.
    #[arg(long)]
    pub provider_root: Option<PathBuf>,
    /// JSON object mapping panorama ids to text descriptions.
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
    /// Worker threads (0 = all cores). Does not affect the output.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Keep the temperature at its initial value.
    #[arg(long)]
    pub fixed_tau: bool,
    /// Apply InfoNCE in both directions of every pair.
    #[arg(long)]
    pub symmetric: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Query embeddings (GBEM).
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Gallery embeddings (GBEM).
    #[arg(long)]
    pub gallery: Option<PathBuf>,
    /// Precomputed judgments JSONL, instead of --queries/--gallery.
    #[arg(long)]
    pub judgments: Option<PathBuf>,
    /// Manifest supplying locations and footprints for Hit and L@d.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub k_list: Option<String>,
    /// Comma-separated L@d distances in meters.
    #[arg(long)]
    pub distance_list: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GateArgs {
    /// Image (PNG or JPEG).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Report JSON to write; printed to stdout either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::dispatch(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
