//! Run every pipeline stage in-process on the synthetic scene, then read the
//! aggregated report back: simulate, reconstruct, smoke, fuse, extract,
//! measure, report.
//!
//! Run with: cargo run --release --example full_pipeline

use embermet::config::PipelineConfig;
use embermet::pipeline::{cmd_run, Artifacts, RunReport};

fn main() -> embermet::Result<()> {
    let dir = std::env::temp_dir().join("embermet_full_pipeline_example");
    let mut config = PipelineConfig::default();
    config.out_dir = dir.clone();
    config.validate()?;

    let timings = cmd_run(&config)?;
    for (stage, ms) in &timings.stages_ms {
        println!("{stage:12} {ms:9.1} ms");
    }

    let artifacts = Artifacts::new(&dir);
    let report: RunReport =
        serde_json::from_str(&std::fs::read_to_string(artifacts.report())?).expect("valid report");
    println!("\nconfig hash: {}", report.config_hash);
    println!("size histogram modes: {:?} mm", report.histogram_modes_mm);
    for (key, value) in &report.counts {
        println!("  {key} = {value}");
    }
    println!("\nartifacts in {}", artifacts.root.display());
    Ok(())
}
