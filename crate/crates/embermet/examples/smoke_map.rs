//! Build the smoke-likelihood map from an exposure stack and segment it into
//! density regions: four per-pixel features (brightness deviation, Weber
//! contrast, dark/bright-channel contrast, response variance) are normalized,
//! combined, and clustered with a 1-D Gaussian mixture.
//!
//! Run with: cargo run --example smoke_map

use embermet::smoke::{build_smoke_map, SmokeWeights};
use embermet::synth::{default_scene, render_exposures, SimConfig};
use embermet::sve::reconstruct_stack;

fn main() -> embermet::Result<()> {
    let scene = default_scene();
    let mosaic = render_exposures(&scene, scene.duration_us / 2, &SimConfig::default())?;
    let stack = reconstruct_stack(&mosaic, true)?;

    let smoke = build_smoke_map(&stack, &SmokeWeights::default(), 4, 7, 1e-6)?;
    println!("likelihood map: {} effective regions", smoke.m);
    for (i, (mean, var)) in smoke.region_stats.iter().enumerate() {
        let n = smoke.labels.iter().filter(|&&l| l as usize == i + 1).count();
        println!("  region {}: mean F {:.4}, var {:.2e}, {} px", i + 1, mean, var, n);
    }
    println!("derived visibility threshold: {:.4}", smoke.default_visibility_threshold());

    // The plume center should carry more smoke likelihood than clear sky.
    let at = |x: usize, y: usize| smoke.f.get(x, y);
    println!("F at plume center (280, 280): {:.4}", at(280, 280));
    println!("F in clear corner (1000, 900): {:.4}", at(1000, 900));
    Ok(())
}
