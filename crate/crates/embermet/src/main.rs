use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use embermet::config::PipelineConfig;
use embermet::pipeline;
use embermet::Error;

/// Combustion metrology pipeline: smoke-aware HDR fusion of a
/// spatially-variant-exposure capture plus stereo event-based particle
/// extraction and 3D sizing.
#[derive(Parser)]
#[command(name = "embermet", version, about)]
struct Cli {
    /// Pipeline configuration file (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; artifacts land in <out>/artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master random seed; every derived stream is keyed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count. Outputs never depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic scene: mosaic, event streams, calibration.
    Simulate,
    /// Demosaic the exposure mosaic into an aligned exposure stack.
    Reconstruct,
    /// Estimate the smoke likelihood map and density regions.
    Smoke,
    /// Fuse the exposure stack into a single radiance frame.
    Fuse,
    /// Cluster, classify, gate and contour particles from event streams.
    Extract,
    /// Match observations across views and triangulate 3D measurements.
    Measure,
    /// Aggregate counts, size histogram and plots into a run report.
    Report,
    /// Run every stage end to end.
    Run,
}

fn load_config(cli: &Cli) -> embermet::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> embermet::Result<()> {
    let config = load_config(cli)?;
    match cli.command {
        Command::Simulate => pipeline::cmd_simulate(&config).map(|_| ()),
        Command::Reconstruct => pipeline::cmd_reconstruct(&config).map(|_| ()),
        Command::Smoke => pipeline::cmd_smoke(&config).map(|_| ()),
        Command::Fuse => pipeline::cmd_fuse(&config).map(|_| ()),
        Command::Extract => pipeline::cmd_extract(&config).map(|_| ()),
        Command::Measure => pipeline::cmd_measure(&config).map(|_| ()),
        Command::Report => pipeline::cmd_report(&config).map(|_| ()),
        Command::Run => pipeline::cmd_run(&config).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match &err {
                Error::Io(_) => Error::Input(String::new()).exit_code(),
                e => e.exit_code(),
            };
            ExitCode::from(code as u8)
        }
    }
}
