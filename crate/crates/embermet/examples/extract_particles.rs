//! Extract particle observations from an event stream: spatiotemporal
//! clustering, radiative-state classification against the fused frame,
//! visibility gating, and alpha-shape contour extraction.
//!
//! Run with: cargo run --example extract_particles

use embermet::event::{
    classify_state, cluster_events, contour_extract, hdr_gate, ClassifyParams, ClusterParams,
    GateParams, Registration, ViewId,
};
use embermet::fusion::{fuse_stack, FusionParams};
use embermet::smoke::{build_smoke_map, SmokeWeights};
use embermet::synth::{default_scene, render_exposures, simulate_events, SimConfig};
use embermet::sve::reconstruct_stack;

fn main() -> embermet::Result<()> {
    let scene = default_scene();
    let config = SimConfig::default();

    let mosaic = render_exposures(&scene, scene.duration_us / 2, &config)?;
    let stack = reconstruct_stack(&mosaic, true)?;
    let smoke = build_smoke_map(&stack, &SmokeWeights::default(), 4, 7, 1e-6)?;
    let hdr = fuse_stack(&stack, &smoke, &FusionParams::default(), "example".to_string())?;
    let theta_vis = smoke.default_visibility_threshold();

    // One 2 ms window from the left camera, which shares the frame sensor's
    // viewpoint, so events register through the identity.
    let labelled = simulate_events(&scene, ViewId::Left, 0, scene.duration_us, &config)?;
    let events = &labelled.stream.events;
    let (lo, hi) = (
        events.partition_point(|e| e.t_us < 4000),
        events.partition_point(|e| e.t_us < 6000),
    );
    let registration = Registration::identity();
    let gate = GateParams { theta_vis, ..GateParams::default() };

    for cluster in cluster_events(&events[lo..hi], &ClusterParams::default()) {
        if cluster.events.len() < 20 {
            continue;
        }
        let state = classify_state(&cluster, &hdr.values, &registration, &ClassifyParams::default());
        let accepted = hdr_gate(&cluster, &smoke, &hdr.values, &registration, &gate);
        let pts: Vec<(f64, f64)> =
            cluster.events.iter().map(|e| (e.u as f64, e.v as f64)).collect();
        match contour_extract(&pts, 4.0) {
            Ok(contour) => println!(
                "cluster of {:4} events at ({:6.1}, {:6.1}): {state:?}, gate {}, area {:.0} px^2",
                cluster.events.len(),
                contour.centroid.0,
                contour.centroid.1,
                if accepted { "pass" } else { "reject" },
                contour.pixel_area
            ),
            Err(e) => println!("cluster of {:4} events: no contour ({e})", cluster.events.len()),
        }
    }
    Ok(())
}
