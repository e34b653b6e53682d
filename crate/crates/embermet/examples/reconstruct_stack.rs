//! Demosaic a spatially-variant-exposure capture into an aligned exposure
//! stack: each 2x2 cell of the sensor carries four neutral-density scales,
//! and reconstruction interpolates the missing samples per exposure plane.
//!
//! Run with: cargo run --example reconstruct_stack

use embermet::synth::{default_scene, render_exposures, SimConfig};
use embermet::sve::reconstruct_stack;

fn main() -> embermet::Result<()> {
    let scene = default_scene();
    let mosaic = render_exposures(&scene, scene.duration_us / 2, &SimConfig::default())?;

    let stack = reconstruct_stack(&mosaic, true)?;
    println!("stack: {} exposures of {}x{} px", stack.k(), stack.width(), stack.height());
    for (k, img) in stack.images.iter().enumerate() {
        let saturated = stack.saturated[k].iter().filter(|&&s| s).count();
        println!(
            "  exposure {k} (scale {:.3}): mean {:.2}, {} saturated px",
            stack.transmittances[k],
            img.mean(),
            saturated
        );
    }
    Ok(())
}
