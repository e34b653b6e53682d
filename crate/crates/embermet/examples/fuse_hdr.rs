//! Fuse an exposure stack into one radiance frame with smoke-aware weights:
//! well-exposedness and illumination weights are blended per smoke region,
//! then combined over a Laplacian pyramid with edge-preserving smoothing.
//!
//! Run with: cargo run --example fuse_hdr

use embermet::fusion::{fuse_stack, tone_map_preview, FusionParams};
use embermet::smoke::{build_smoke_map, SmokeWeights};
use embermet::synth::{default_scene, render_exposures, SimConfig};
use embermet::sve::reconstruct_stack;

fn main() -> embermet::Result<()> {
    let scene = default_scene();
    let mosaic = render_exposures(&scene, scene.duration_us / 2, &SimConfig::default())?;
    let stack = reconstruct_stack(&mosaic, true)?;
    let smoke = build_smoke_map(&stack, &SmokeWeights::default(), 4, 7, 1e-6)?;

    let hdr = fuse_stack(&stack, &smoke, &FusionParams::default(), "example".to_string())?;
    let (lo, hi) = hdr.values.min_max();
    println!(
        "fused frame: {}x{} px, range [{lo:.2}, {hi:.2}], mean {:.2}",
        hdr.values.width(),
        hdr.values.height(),
        hdr.values.mean()
    );

    let preview = tone_map_preview(&hdr.values);
    let bright = preview.iter().filter(|&&v| v > 200).count();
    println!("tone-mapped preview: {} px above 200/255", bright);

    // The particles should stand far above the local background.
    let particle = hdr.values.get(583, 633);
    let background = hdr.values.get(900, 300);
    println!("fused value at a particle: {particle:.1}, at background: {background:.1}");
    Ok(())
}
