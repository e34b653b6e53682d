//! Render the built-in synthetic scene: a spatially-variant-exposure mosaic
//! of three glowing particles behind a Gaussian smoke plume, plus the event
//! streams both cameras would record while the particles ramp up.
//!
//! Run with: cargo run --example simulate_scene

use embermet::event::ViewId;
use embermet::synth::{default_scene, render_exposures, simulate_events, SimConfig};

fn main() -> embermet::Result<()> {
    let scene = default_scene();
    let config = SimConfig::default();

    let mosaic = render_exposures(&scene, scene.duration_us / 2, &config)?;
    println!(
        "mosaic: {}x{} px, {} bit, exposure scales {:?}",
        mosaic.values.width(),
        mosaic.values.height(),
        mosaic.bit_depth,
        mosaic.transmittances
    );

    for view in [ViewId::Left, ViewId::Right] {
        let labelled = simulate_events(&scene, view, 0, scene.duration_us, &config)?;
        let n = labelled.stream.events.len();
        let positive = labelled.stream.events.iter().filter(|e| e.p > 0).count();
        println!(
            "{view:?}: {n} events over {} us ({positive} positive), first at t={} us",
            scene.duration_us,
            labelled.stream.events.first().map(|e| e.t_us).unwrap_or(0)
        );
    }

    for (i, p) in scene.particles.iter().enumerate() {
        let px = scene.rig.left.project(&nalgebra::Vector3::from(p.pos0_mm))?;
        println!(
            "particle {i}: radius {} mm, radiance {}, projects to ({:.1}, {:.1}) in the left view",
            p.radius_mm, p.radiance, px.x, px.y
        );
    }
    Ok(())
}
