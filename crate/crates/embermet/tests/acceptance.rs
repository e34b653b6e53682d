//! End-to-end acceptance gate. Each test prints one PASS/FAIL line; a test
//! failure means the corresponding guarantee is broken. Tolerances are
//! pinned, not tuned: loosening them here is never the right fix.

use std::time::{Duration, Instant};

use embermet::config::PipelineConfig;
use embermet::event::{
    cluster_events, hdr_gate, motion_compensate, read_events_binary, read_events_csv,
    write_events_binary, write_events_csv, ClusterParams, Event, GateParams, Registration, ViewId,
};
use embermet::fusion::{fuse_stack, FusionParams};
use embermet::image::{collapse_pyramid, laplacian_pyramid, Image};
use embermet::io::{read_calibration, write_calibration, Calibration};
use embermet::pipeline::{cmd_run, Artifacts};
use embermet::smoke::{
    brightness_deviation, build_smoke_map, combine_likelihood, compute_features,
    contrast_feature, dark_bright_channels, pixel_variance, segment_regions, weber_contrast,
    SmokeWeights,
};
use embermet::stereo::{default_rig, triangulate, ColumnAxis, StereoRig};
use embermet::sve::ExposureStack;
use embermet::synth::{default_scene, simulate_events, EventProvenance, SimConfig};
use nalgebra::{Vector2, Vector3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

fn verdict(id: u32, what: &str, pass: bool, detail: String) {
    println!(
        "ACCEPTANCE {id} ({what}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance criterion {id} failed: {detail}");
}

fn check_budget(id: u32, start: Instant, budget: Duration) -> Duration {
    let elapsed = start.elapsed();
    assert!(
        elapsed < budget,
        "acceptance criterion {id} exceeded its time budget: {elapsed:?} >= {budget:?}"
    );
    elapsed
}

/// Random point inside the joint working volume around the column at z≈100 mm
/// in the left frame.
fn in_volume_point(rng: &mut StdRng) -> Vector3<f64> {
    Vector3::new(
        rng.gen_range(-6.0..6.0),
        rng.gen_range(-8.0..12.0),
        rng.gen_range(92.0..108.0),
    )
}

// ---------------------------------------------------------------------------
// 1. Triangulation accuracy on noisy scale targets
// ---------------------------------------------------------------------------

#[test]
fn acceptance_1_triangulation_accuracy_on_noisy_scale_targets() {
    let start = Instant::now();
    let rig = default_rig();
    // Ten scale bars spanning the working volume diagonally; each endpoint is
    // marked by a small 4-corner fiducial, so the endpoint estimate averages
    // four independently noised triangulations, as a corner target would.
    let targets: Vec<(Vector3<f64>, Vector3<f64>)> = (0..10)
        .map(|i| {
            let s = i as f64 / 9.0;
            let a = Vector3::new(-5.0 + 2.0 * s, -7.5 + s, 94.0 + 4.0 * s);
            let b = a + Vector3::new(9.0 - 2.0 * s, 18.5 - s, 9.0 - 4.0 * s);
            (a, b)
        })
        .collect();
    let corner_offsets = [
        Vector3::new(0.5, 0.5, 0.0),
        Vector3::new(-0.5, 0.5, 0.0),
        Vector3::new(0.5, -0.5, 0.0),
        Vector3::new(-0.5, -0.5, 0.0),
    ];

    let mut max_rel_err: f64 = 0.0;
    let mut abs_err_sum = 0.0;
    let mut n = 0usize;
    for seed in 0..100u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        for (a, b) in &targets {
            let mut endpoints = Vec::new();
            for p in [a, b] {
                let mut acc = Vector3::zeros();
                for off in &corner_offsets {
                    let corner = p + off;
                    let l = rig.left.project(&corner).unwrap();
                    let r = rig.right.project(&corner).unwrap();
                    let lpx =
                        Vector2::new(l.x + noise.sample(&mut rng), l.y + noise.sample(&mut rng));
                    let rpx =
                        Vector2::new(r.x + noise.sample(&mut rng), r.y + noise.sample(&mut rng));
                    acc += triangulate(&rig, &lpx, &rpx).unwrap().point_world - off;
                }
                endpoints.push(acc / corner_offsets.len() as f64);
            }
            let measured = (endpoints[1] - endpoints[0]).norm();
            let truth = (b - a).norm();
            max_rel_err = max_rel_err.max((measured - truth).abs() / truth);
            abs_err_sum += (measured - truth).abs();
            n += 1;
        }
    }
    let mae = abs_err_sum / n as f64;
    let elapsed = check_budget(1, start, Duration::from_secs(5));
    verdict(
        1,
        "triangulation accuracy",
        max_rel_err <= 0.0056 && mae <= 0.1,
        format!("max rel length error {max_rel_err:.5} (≤ 0.0056), MAE {mae:.5} mm (≤ 0.1), {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 2. Noise-free geometric round-trip
// ---------------------------------------------------------------------------

#[test]
fn acceptance_2_noise_free_projection_triangulation_round_trip() {
    let start = Instant::now();
    let rig = default_rig();
    let mut rng = StdRng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = in_volume_point(&mut rng);
        let l = rig.left.project(&p).unwrap();
        let r = rig.right.project(&p).unwrap();
        let back = triangulate(&rig, &l, &r).unwrap().point_world;
        worst = worst.max((back - p).norm());
    }
    let elapsed = check_budget(2, start, Duration::from_secs(1));
    verdict(
        2,
        "geometric round-trip",
        worst < 1e-6,
        format!("worst recovery error {worst:.2e} mm over 1000 points (< 1e-6), {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 3. Smoke feature brute-force oracle + weight linearity
// ---------------------------------------------------------------------------

fn random_stack(rng: &mut StdRng) -> ExposureStack {
    let imgs: Vec<Image> = (0..4)
        .map(|_| Image::from_fn(16, 16, |_, _| rng.gen_range(1.0..4000.0)))
        .collect();
    ExposureStack::from_images(imgs, vec![1.0, 0.5, 0.25, 0.125], 1e9).unwrap()
}

fn mirror(i: isize, n: usize) -> usize {
    embermet::image::mirror_index(i, n)
}

#[test]
fn acceptance_3_smoke_features_match_scalar_brute_force() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(3);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);

    for case in 0..1000 {
        let stack = random_stack(&mut rng);
        let (w, h) = (stack.width(), stack.height());

        // Brightness deviation, from the definition.
        let bi = brightness_deviation(&stack).unwrap();
        // Weber contrast, from the definition.
        let wc = weber_contrast(&stack).unwrap();
        // Dark/bright channel contrast, window 3.
        let (dark, bright) = dark_bright_channels(&stack, 3).unwrap();
        let cf = contrast_feature(&dark, &bright).unwrap();
        // Across-exposure variance.
        let var = pixel_variance(&stack).unwrap();

        // Sample a handful of pixels per case, all four features.
        for _ in 0..4 {
            let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));

            let mut bi_acc = 0.0;
            for (k, img) in stack.images.iter().enumerate() {
                let mu = stack.per_image_mean[k];
                let d = img.get(x, y).max(mu / 2.0) - mu;
                bi_acc += d * d;
            }
            let bi_ref = bi_acc.sqrt() / stack.k() as f64;
            assert!(rel(bi.get(x, y), bi_ref) < 1e-9, "BI mismatch case {case}");

            let mut wc_acc = 0.0;
            for img in &stack.images {
                let gx = (img.get(mirror(x as isize + 1, w), y)
                    - img.get(mirror(x as isize - 1, w), y))
                    / 2.0;
                let gy = (img.get(x, mirror(y as isize + 1, h))
                    - img.get(x, mirror(y as isize - 1, h)))
                    / 2.0;
                wc_acc += (gx * gx + gy * gy).sqrt() / (img.get(x, y) + 1.0);
            }
            let wc_ref = wc_acc / stack.k() as f64;
            assert!(rel(wc.get(x, y), wc_ref) < 1e-9, "WC mismatch case {case}");

            // Dark/bright channels: window min/max of the per-pixel extrema.
            let (mut dmin, mut bmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (xx, yy) = (mirror(x as isize + dx, w), mirror(y as isize + dy, h));
                    for img in &stack.images {
                        dmin = dmin.min(img.get(xx, yy));
                        bmax = bmax.max(img.get(xx, yy));
                    }
                }
            }
            // Pixelwise extrema first, then window extrema, is the same as
            // the joint min/max over (window x exposure) — brute force both.
            assert!(rel(dark.get(x, y), dmin) < 1e-9, "dark channel mismatch case {case}");
            assert!(rel(bright.get(x, y), bmax) < 1e-9, "bright channel mismatch case {case}");
            let cf_ref = (1.0 - dmin / bmax.max(1.0)).clamp(0.0, 1.0);
            assert!(rel(cf.get(x, y), cf_ref) < 1e-9, "CF mismatch case {case}");

            let k = stack.k() as f64;
            let mean: f64 = stack.images.iter().map(|i| i.get(x, y)).sum::<f64>() / k;
            let var_ref: f64 =
                stack.images.iter().map(|i| (i.get(x, y) - mean).powi(2)).sum::<f64>() / k;
            assert!(rel(var.get(x, y), var_ref) < 1e-9, "variance mismatch case {case}");
        }
    }

    // Weight normalization and linearity of the combination.
    let weights = SmokeWeights::default();
    let sum = weights.alpha + weights.beta + weights.gamma + weights.sigma;
    assert!((sum - 1.0).abs() < 1e-12, "weights must sum to 1, got {sum}");
    let stack = random_stack(&mut rng);
    let features = compute_features(&stack, 3, 1e-6).unwrap();
    let combined = combine_likelihood(&features, &weights).unwrap();
    // Linearity: the combined map is exactly the weighted sum of the
    // min-max-normalized features, bit for bit.
    let bi_n = features.bi.normalize_min_max();
    let wc_n = features.wc.normalize_min_max();
    let cf_n = features.cf.normalize_min_max();
    let v_n = features.v.normalize_min_max();
    let exact = (0..combined.len()).all(|i| {
        combined.data()[i]
            == weights.alpha * bi_n.data()[i]
                + weights.beta * wc_n.data()[i]
                + weights.gamma * cf_n.data()[i]
                + weights.sigma * v_n.data()[i]
    });

    let elapsed = check_budget(3, start, Duration::from_secs(5));
    verdict(
        3,
        "smoke feature oracle",
        exact,
        format!("1000 random stacks to 1e-9 rel, weights sum {sum}, linearity exact, {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 4. Fusion identity / pyramid round-trip / idempotence
// ---------------------------------------------------------------------------

#[test]
fn acceptance_4_fusion_identity_and_pyramid_round_trip() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(4);
    let img = Image::from_fn(64, 48, |x, y| {
        50.0 + 20.0 * ((x as f64) / 9.0).sin() + 10.0 * ((y as f64) / 7.0).cos()
            + rng.gen_range(0.0..5.0)
    });
    let max_rel = |a: &Image, b: &Image| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs() / x.abs().max(1e-9))
            .fold(0.0f64, f64::max)
    };

    // K = 1 fusion is the identity.
    let single =
        ExposureStack::from_images(vec![img.clone()], vec![1.0], 1e9).unwrap();
    let smoke = build_smoke_map(&single, &SmokeWeights::default(), 2, 3, 1e-6)
        .unwrap_or_else(|_| trivial_smoke(&img));
    let fused = fuse_stack(&single, &smoke, &FusionParams::default(), String::new()).unwrap();
    let identity_err = max_rel(&fused.values, &img);

    // Laplacian pyramid decompose/collapse round-trip.
    let lap = laplacian_pyramid(&img, 5);
    let collapsed = collapse_pyramid(&lap);
    let pyramid_err = max_rel(&collapsed, &img);

    // Idempotence: K identical exposures fuse back to the common image.
    let stack = ExposureStack::from_images(
        vec![img.clone(), img.clone(), img.clone(), img.clone()],
        vec![1.0; 4],
        1e9,
    )
    .unwrap();
    let smoke4 = build_smoke_map(&stack, &SmokeWeights::default(), 2, 3, 1e-6)
        .unwrap_or_else(|_| trivial_smoke(&img));
    let fused4 = fuse_stack(&stack, &smoke4, &FusionParams::default(), String::new()).unwrap();
    let idempotence_err = max_rel(&fused4.values, &img);

    let elapsed = check_budget(4, start, Duration::from_secs(5));
    verdict(
        4,
        "fusion identity and round-trip",
        identity_err < 1e-3 && pyramid_err < 1e-3 && idempotence_err < 1e-3,
        format!(
            "K=1 identity {identity_err:.2e}, pyramid round-trip {pyramid_err:.2e}, idempotence {idempotence_err:.2e} (all < 1e-3), {elapsed:?}"
        ),
    );
}

fn trivial_smoke(img: &Image) -> embermet::smoke::SmokeMap {
    embermet::smoke::SmokeMap {
        f: Image::new(img.width(), img.height()),
        weights: SmokeWeights::default(),
        labels: vec![1; img.len()],
        m: 1,
        region_stats: vec![(0.0, 0.0)],
    }
}

// ---------------------------------------------------------------------------
// 5. Segmentation oracle
// ---------------------------------------------------------------------------

#[test]
fn acceptance_5_segmentation_recovers_two_component_mixture() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(5);
    let lo = Normal::new(0.2, 0.03).unwrap();
    let hi = Normal::new(0.75, 0.03).unwrap();
    let (w, h) = (128, 96);
    let mut truth = vec![0u8; w * h];
    let f = Image::from_fn(w, h, |x, y| {
        let is_hi = (x / 16 + y / 16) % 2 == 1;
        truth[y * w + x] = if is_hi { 2 } else { 1 };
        let d: f64 = if is_hi { hi.sample(&mut rng) } else { lo.sample(&mut rng) };
        d.clamp(0.0, 1.0)
    });

    let (labels, m, _) = segment_regions(&f, 2).unwrap();
    assert_eq!(m, 2, "expected two effective regions");
    let correct = labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
    let accuracy = correct as f64 / truth.len() as f64;

    // Determinism at M = 4 on the same map.
    let run1 = segment_regions(&f, 4).unwrap();
    let run2 = segment_regions(&f, 4).unwrap();
    let deterministic = run1.0 == run2.0 && run1.1 == run2.1;

    let elapsed = check_budget(5, start, Duration::from_secs(10));
    verdict(
        5,
        "segmentation oracle",
        accuracy > 0.99 && deterministic,
        format!("label accuracy {accuracy:.4} (> 0.99), M=4 rerun identical: {deterministic}, {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 6. Event pipeline oracle: compensation + gating on the default scene
// ---------------------------------------------------------------------------

#[test]
fn acceptance_6_motion_compensation_and_visibility_gating() {
    let start = Instant::now();

    // (a) Exact linear motion collapses to zero spatial variance.
    let v = (0.02, -0.015); // px/µs
    let mut events = Vec::new();
    for i in 0..200i64 {
        let t = i * 5;
        events.push(Event {
            t_us: t,
            u: (40.0 + v.0 * t as f64).round() as u16,
            v: (60.0 + v.1 * t as f64).round() as u16,
            p: 1,
        });
    }
    // Use exact (unrounded) coordinates via the warp on a fabricated cloud:
    let exact: Vec<_> = (0..200i64)
        .map(|i| {
            let t = i * 5;
            embermet::event::CompensatedEvent {
                t_us: t,
                x: 40.0 + v.0 * t as f64,
                y: 60.0 + v.1 * t as f64,
                p: 1,
            }
        })
        .collect();
    let warped = embermet::event::warp(&exact, Vector2::new(v.0, v.1), 0);
    let var_exact = spatial_variance(&warped);

    // (b) Jittered linear motion: compensated variance < 10% of raw.
    let mut rng = StdRng::seed_from_u64(6);
    let jitter = Normal::new(0.0, 0.5).unwrap();
    let jittered: Vec<Event> = (0..400i64)
        .map(|i| {
            let t = i * 5;
            Event {
                t_us: t,
                u: (140.0 + 0.03 * t as f64 + jitter.sample(&mut rng)).round() as u16,
                v: (160.0 - 0.02 * t as f64 + jitter.sample(&mut rng)).round() as u16,
                p: 1,
            }
        })
        .collect();
    let comp = motion_compensate(&jittered, 0, 2000);
    let raw: Vec<_> = jittered
        .iter()
        .map(|e| embermet::event::CompensatedEvent {
            t_us: e.t_us,
            x: e.u as f64,
            y: e.v as f64,
            p: e.p,
        })
        .collect();
    let var_raw = spatial_variance(&raw);
    let var_comp = spatial_variance(&comp.events);
    let jitter_ok = var_comp < 0.1 * var_raw;

    // (c) Visibility gating on the default scene, judged against simulator
    // provenance labels: smoke-driven clusters rejected, particles accepted.
    let scene = default_scene();
    let config = PipelineConfig::default();
    let sim = SimConfig::default();
    let labelled = simulate_events(&scene, ViewId::Left, 0, scene.duration_us, &sim).unwrap();
    let stack = embermet::sve::reconstruct_stack(
        &embermet::synth::render_exposures(&scene, scene.duration_us / 2, &sim).unwrap(),
        true,
    )
    .unwrap();
    let smoke = build_smoke_map(&stack, &SmokeWeights::default(), 4, 7, 1e-6).unwrap();
    let hdr = fuse_stack(&stack, &smoke, &FusionParams::default(), String::new()).unwrap();
    let gate = GateParams {
        theta_vis: smoke.default_visibility_threshold(),
        ..GateParams::default()
    };
    let registration = Registration::identity();

    let events = &labelled.stream.events;
    let mut particle = (0usize, 0usize); // (accepted, total)
    let mut smoke_only = (0usize, 0usize); // (rejected, total)
    let window = 1000i64;
    let mut t0 = 0;
    while t0 < scene.duration_us {
        let lo = events.partition_point(|e| e.t_us < t0);
        let hi = events.partition_point(|e| e.t_us < t0 + window);
        for cluster in cluster_events(&events[lo..hi], &ClusterParams::default()) {
            if cluster.events.len() < 20 {
                continue;
            }
            let n_particle = cluster
                .indices
                .iter()
                .filter(|&&i| {
                    matches!(labelled.provenance[lo + i], EventProvenance::Particle(_))
                })
                .count();
            let frac = n_particle as f64 / cluster.events.len() as f64;
            let accepted =
                hdr_gate(&cluster, &smoke, &hdr.values, &registration, &gate);
            if frac > 0.9 {
                particle.1 += 1;
                particle.0 += accepted as usize;
            } else if frac < 0.1 {
                smoke_only.1 += 1;
                smoke_only.0 += (!accepted) as usize;
            }
        }
        t0 += window;
    }
    assert!(particle.1 >= 10, "too few particle clusters to judge: {}", particle.1);
    assert!(smoke_only.1 >= 10, "too few smoke clusters to judge: {}", smoke_only.1);
    let particle_rate = particle.0 as f64 / particle.1 as f64;
    let smoke_rate = smoke_only.0 as f64 / smoke_only.1 as f64;
    let _ = config;

    let elapsed = check_budget(6, start, Duration::from_secs(30));
    verdict(
        6,
        "event pipeline oracle",
        var_exact < 1e-12 && jitter_ok && particle_rate >= 0.95 && smoke_rate >= 0.90,
        format!(
            "exact-motion variance {var_exact:.2e}, jittered {:.1}% of raw (< 10%), particles accepted {particle_rate:.3} (≥ 0.95, n={}), smoke rejected {smoke_rate:.3} (≥ 0.90, n={}), {elapsed:?}",
            100.0 * var_comp / var_raw,
            particle.1,
            smoke_only.1
        ),
    );
}

fn spatial_variance(events: &[embermet::event::CompensatedEvent]) -> f64 {
    let n = events.len() as f64;
    let (mx, my) = (
        events.iter().map(|e| e.x).sum::<f64>() / n,
        events.iter().map(|e| e.y).sum::<f64>() / n,
    );
    events.iter().map(|e| (e.x - mx).powi(2) + (e.y - my).powi(2)).sum::<f64>() / n
}

// ---------------------------------------------------------------------------
// 7. End-to-end metrology on the default scene
// ---------------------------------------------------------------------------

#[test]
fn acceptance_7_end_to_end_metrology() {
    let start = Instant::now();
    let dir = std::env::temp_dir().join("embermet_acceptance_7");
    let _ = std::fs::remove_dir_all(&dir);
    let mut config = PipelineConfig::default();
    config.out_dir = dir.clone();
    config.validate().unwrap();
    cmd_run(&config).unwrap();

    let artifacts = Artifacts::new(&dir);
    let measurements: Vec<embermet::stereo::ParticleMeasurement> = serde_json::from_str(
        &std::fs::read_to_string(artifacts.measurements_json()).unwrap(),
    )
    .unwrap();
    assert!(!measurements.is_empty(), "no stereo measurements produced");

    // Ground truth: particle radii and separation heights from the scene.
    let scene = default_scene();
    let axis = ColumnAxis::new(
        Vector3::from(scene.column_p1_mm),
        Vector3::from(scene.column_p2_mm),
    )
    .unwrap();
    let truths: Vec<(f64, f64)> = scene
        .particles
        .iter()
        .map(|p| {
            let dh = embermet::stereo::separation_height(&axis, &Vector3::from(p.pos0_mm));
            (dh, p.radius_mm)
        })
        .collect();

    let mut max_dh_err: f64 = 0.0;
    let mut max_re_rel: f64 = 0.0;
    let mut seen = vec![0usize; truths.len()];
    for m in &measurements {
        let (i, &(dh, r)) = truths
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 .0 - m.dh_mm).abs().partial_cmp(&(b.1 .0 - m.dh_mm).abs()).unwrap()
            })
            .unwrap();
        seen[i] += 1;
        max_dh_err = max_dh_err.max((m.dh_mm - dh).abs());
        max_re_rel = max_re_rel.max((m.re_mm - r).abs() / r);
    }
    let all_seen = seen.iter().all(|&n| n > 0);

    let report: embermet::pipeline::RunReport =
        serde_json::from_str(&std::fs::read_to_string(artifacts.report()).unwrap()).unwrap();
    let modes = report.histogram_modes_mm.len();

    let elapsed = check_budget(7, start, Duration::from_secs(60));
    verdict(
        7,
        "end-to-end metrology",
        max_dh_err <= 0.1 && max_re_rel <= 0.05 && modes == 3 && all_seen,
        format!(
            "max Δh error {max_dh_err:.4} mm (≤ 0.1), max r_e rel error {max_re_rel:.4} (≤ 0.05), {modes} histogram modes (= 3), all particles measured: {all_seen}, {} measurements, {elapsed:?}",
            measurements.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Determinism: byte-identical artifact trees
// ---------------------------------------------------------------------------

#[test]
fn acceptance_8_reruns_produce_byte_identical_artifacts() {
    let bin = env!("CARGO_BIN_EXE_embermet");
    let base = std::env::temp_dir().join("embermet_acceptance_8");
    let _ = std::fs::remove_dir_all(&base);
    let dirs = [base.join("a"), base.join("b")];
    for dir in &dirs {
        let status = std::process::Command::new(bin)
            .args(["run", "--out"])
            .arg(dir)
            .args(["--seed", "7"])
            .status()
            .expect("failed to spawn pipeline binary");
        assert!(status.success(), "pipeline run failed in {dir:?}");
    }
    let trees: Vec<Vec<(String, Vec<u8>)>> = dirs
        .iter()
        .map(|d| {
            let mut files = Vec::new();
            collect_files(&d.join("artifacts"), &d.join("artifacts"), &mut files);
            files.sort();
            files
        })
        .collect();
    let names_a: Vec<&String> = trees[0].iter().map(|(n, _)| n).collect();
    let names_b: Vec<&String> = trees[1].iter().map(|(n, _)| n).collect();
    assert_eq!(names_a, names_b, "artifact file sets differ");
    let mut mismatched = Vec::new();
    for ((name, a), (_, b)) in trees[0].iter().zip(&trees[1]) {
        if a != b {
            mismatched.push(name.clone());
        }
    }
    verdict(
        8,
        "determinism",
        mismatched.is_empty(),
        format!(
            "{} artifacts compared, mismatches: {:?}",
            trees[0].len(),
            mismatched
        ),
    );
}

fn collect_files(root: &std::path::Path, dir: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
    for entry in std::fs::read_dir(dir).expect("artifact dir") {
        let path = entry.expect("dir entry").path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.push((rel, std::fs::read(&path).unwrap()));
        }
    }
}

// ---------------------------------------------------------------------------
// 9. Codec round-trips on randomized fixtures
// ---------------------------------------------------------------------------

#[test]
fn acceptance_9_codec_round_trips_are_lossless() {
    let mut rng = StdRng::seed_from_u64(9);
    let mut all_ok = true;

    for _ in 0..50 {
        let mut events: Vec<Event> = (0..rng.gen_range(1..500))
            .map(|_| Event {
                t_us: rng.gen_range(0..1_000_000),
                u: rng.gen_range(0..1280),
                v: rng.gen_range(0..1024),
                p: if rng.gen_bool(0.5) { 1 } else { -1 },
            })
            .collect();
        events.sort_by_key(|e| (e.t_us, e.u, e.v, e.p));

        let mut csv = Vec::new();
        write_events_csv(&mut csv, &events).unwrap();
        all_ok &= read_events_csv(std::io::Cursor::new(&csv)).unwrap() == events;

        let mut bin = Vec::new();
        write_events_binary(&mut bin, &events).unwrap();
        all_ok &= read_events_binary(std::io::Cursor::new(&bin)).unwrap() == events;
    }

    let dir = std::env::temp_dir().join("embermet_acceptance_9");
    std::fs::create_dir_all(&dir).unwrap();
    for i in 0..50 {
        let rig = perturbed_rig(&mut rng);
        let calib = Calibration::from_rig(&rig);
        let path = dir.join(format!("calib_{i}.json"));
        write_calibration(&path, &calib).unwrap();
        let back = read_calibration(&path).unwrap();
        let same = format!("{:?}", back) == format!("{:?}", calib);
        all_ok &= same;
        let rig_back = back.to_rig().unwrap();
        all_ok &= rig_back.left.focal_px == rig.left.focal_px
            && rig_back.right.rotation == rig.right.rotation
            && rig_back.right.translation == rig.right.translation;
    }

    verdict(9, "codec round-trips", all_ok, "event CSV/binary and calibration files lossless on randomized fixtures".to_string());
}

fn perturbed_rig(rng: &mut StdRng) -> StereoRig {
    let mut rig = default_rig();
    rig.left.focal_px += rng.gen_range(-5.0..5.0);
    rig.right.focal_px += rng.gen_range(-5.0..5.0);
    rig.left.principal_point.0 += rng.gen_range(-2.0..2.0);
    rig.right.principal_point.1 += rng.gen_range(-2.0..2.0);
    for d in rig.left.distortion.iter_mut().chain(rig.right.distortion.iter_mut()) {
        *d += rng.gen_range(-0.01..0.01);
    }
    rig.right.translation += Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    rig
}
