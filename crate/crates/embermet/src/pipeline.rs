//! Stage orchestration: every subcommand reads its inputs from the artifact
//! tree (or explicit input paths), writes its artifacts deterministically,
//! and leaves a report fragment. Timing data lives outside the artifact tree
//! so reruns stay byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::event::{
    classify_state, cluster_events, contour_extract, hdr_gate, motion_compensate,
    read_events_binary, read_events_csv, select_geometry_events, write_events_binary,
    ClassifyParams, CompensatedEvent, EventStream, GateParams, ParticleState, Registration,
    ViewId,
};
use crate::fusion::{fuse_stack, tone_map_preview};
use crate::image::Image;
use crate::io;
use crate::smoke::{build_smoke_map, SmokeMap};
use crate::stereo::{
    epipolar_match, measure_pair, size_histogram, ColumnAxis, ParticleMeasurement, StereoRig,
    ViewObservation,
};
use crate::sve::{reconstruct_stack, ExposureStack, MosaicLayout, RawSveMosaic};
use crate::synth::{default_scene, render_exposures, simulate_events, SceneTruth, SimConfig};

/// Artifact layout inside the output directory.
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(out_dir: &Path) -> Self {
        Self { root: out_dir.join("artifacts") }
    }

    pub fn ensure(&self) -> Result<()> {
        fs::create_dir_all(self.root.join("reports"))?;
        Ok(())
    }

    pub fn mosaic(&self) -> PathBuf {
        self.root.join("mosaic.png")
    }
    pub fn calibration(&self) -> PathBuf {
        self.root.join("calibration.json")
    }
    pub fn scene(&self) -> PathBuf {
        self.root.join("scene.json")
    }
    pub fn events(&self, view: ViewId) -> PathBuf {
        match view {
            ViewId::Left => self.root.join("events_left.evt"),
            ViewId::Right => self.root.join("events_right.evt"),
        }
    }
    pub fn exposure(&self, k: usize) -> PathBuf {
        self.root.join(format!("exposure_{k}.pfm"))
    }
    pub fn smoke_f(&self) -> PathBuf {
        self.root.join("smoke_f.pfm")
    }
    pub fn smoke_labels_view(&self) -> PathBuf {
        self.root.join("smoke_labels.png")
    }
    pub fn smoke_labels_raw(&self) -> PathBuf {
        self.root.join("smoke_labels_raw.png")
    }
    pub fn smoke_regions(&self) -> PathBuf {
        self.root.join("smoke_regions.json")
    }
    pub fn hdr(&self) -> PathBuf {
        self.root.join("hdr.pfm")
    }
    pub fn hdr_preview(&self) -> PathBuf {
        self.root.join("hdr_preview.png")
    }
    pub fn observations(&self, view: ViewId) -> PathBuf {
        match view {
            ViewId::Left => self.root.join("observations_left.json"),
            ViewId::Right => self.root.join("observations_right.json"),
        }
    }
    pub fn measurements_csv(&self) -> PathBuf {
        self.root.join("measurements.csv")
    }
    pub fn measurements_json(&self) -> PathBuf {
        self.root.join("measurements.json")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn histogram_png(&self) -> PathBuf {
        self.root.join("size_histogram.png")
    }
    pub fn dh_plot_png(&self) -> PathBuf {
        self.root.join("dh_vs_time.png")
    }
    pub fn fragment(&self, stage: &str) -> PathBuf {
        self.root.join("reports").join(format!("{stage}.json"))
    }
}

/// Report fragment left behind by one stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub counts: BTreeMap<String, u64>,
    pub notes: Vec<String>,
}

impl StageReport {
    fn new(stage: &str) -> Self {
        Self { stage: stage.to_string(), counts: BTreeMap::new(), notes: Vec::new() }
    }

    fn count(&mut self, key: &str, value: u64) {
        self.counts.insert(key.to_string(), value);
    }

    fn write(&self, artifacts: &Artifacts) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Input(format!("report fragment: {e}")))?;
        fs::write(artifacts.fragment(&self.stage), json)?;
        Ok(())
    }
}

/// Aggregated run report (deterministic; no wall-clock data).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub config_hash: String,
    pub counts: BTreeMap<String, u64>,
    pub histogram_modes_mm: Vec<f64>,
    pub measurement_csv: String,
    pub notes: Vec<String>,
}

/// Wall-clock stage timings, written next to (not inside) the artifact tree.
#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub stages_ms: Vec<(String, f64)>,
}

impl Timings {
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Input(format!("timings: {e}")))?;
        fs::write(out_dir.join("timings.json"), json)?;
        Ok(())
    }
}

fn timed<T>(timings: &mut Timings, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    timings.stages_ms.push((name.to_string(), start.elapsed().as_secs_f64() * 1e3));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Stage: simulate
// ---------------------------------------------------------------------------

fn load_scene(config: &PipelineConfig) -> Result<SceneTruth> {
    match &config.inputs.scene {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("scene {path:?}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Parse { offset: e.column() as u64, msg: format!("scene: {e}") })
        }
        None => Ok(default_scene()),
    }
}

fn sim_config(config: &PipelineConfig) -> SimConfig {
    SimConfig {
        contrast_threshold: config.simulate.contrast_threshold,
        event_noise_rate: config.simulate.event_noise_rate,
        pixel_jitter_sigma: config.simulate.pixel_jitter_sigma,
        transmittances: config.mosaic.transmittances,
        bit_depth: config.mosaic.bit_depth,
        seed: config.seed,
        time_step_us: config.simulate.time_step_us,
        eddy_events: config.simulate.eddy_events,
    }
}

pub fn cmd_simulate(config: &PipelineConfig) -> Result<StageReport> {
    let artifacts = Artifacts::new(&config.out_dir);
    artifacts.ensure()?;
    let scene = load_scene(config)?;
    let sim = sim_config(config);
    let mosaic = render_exposures(&scene, config.simulate.frame_time_us, &sim)?;
    io::write_png16(&artifacts.mosaic(), &mosaic.values)?;
    let mut report = StageReport::new("simulate");
    for view in [ViewId::Left, ViewId::Right] {
        let labelled = simulate_events(&scene, view, 0, scene.duration_us, &sim)?;
        let mut file = fs::File::create(artifacts.events(view))?;
        write_events_binary(&mut file, &labelled.stream.events)?;
        let key = match view {
            ViewId::Left => "events_left",
            ViewId::Right => "events_right",
        };
        report.count(key, labelled.stream.events.len() as u64);
    }
    let calib = io::Calibration::from_rig(&scene.rig);
    io::write_calibration(&artifacts.calibration(), &calib)?;
    let scene_json = serde_json::to_string_pretty(&scene)
        .map_err(|e| Error::Input(format!("scene serialize: {e}")))?;
    fs::write(artifacts.scene(), scene_json)?;
    report.count("particles", scene.particles.len() as u64);
    report.write(&artifacts)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Stage: reconstruct
// ---------------------------------------------------------------------------

fn load_mosaic(config: &PipelineConfig, artifacts: &Artifacts) -> Result<RawSveMosaic> {
    let path = config.inputs.mosaic.clone().unwrap_or_else(|| artifacts.mosaic());
    config.require_paths(&[("mosaic", &path)])?;
    let values = io::read_png16(&path)?;
    RawSveMosaic::new(
        values,
        config.mosaic.transmittances,
        config.mosaic.bit_depth,
        MosaicLayout(config.mosaic.layout),
    )
}

fn load_stack(config: &PipelineConfig, artifacts: &Artifacts) -> Result<ExposureStack> {
    // The inter-stage contract is the mosaic: every consumer re-derives the
    // stack identically, so split stages equal the all-in-one run.
    let mosaic = load_mosaic(config, artifacts)?;
    reconstruct_stack(&mosaic, config.mosaic.rescale_by_tau)
}

pub fn cmd_reconstruct(config: &PipelineConfig) -> Result<StageReport> {
    let artifacts = Artifacts::new(&config.out_dir);
    artifacts.ensure()?;
    let stack = load_stack(config, &artifacts)?;
    for (k, img) in stack.images.iter().enumerate() {
        io::write_pfm(&artifacts.exposure(k), img)?;
    }
    let mut report = StageReport::new("reconstruct");
    report.count("exposures", stack.k() as u64);
    report.count("pixels", (stack.width() * stack.height()) as u64);
    report.write(&artifacts)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Stage: smoke
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SmokeRegions {
    m: usize,
    region_stats: Vec<(f64, f64)>,
    alpha: f64,
    beta: f64,
    gamma: f64,
    sigma: f64,
}

pub fn cmd_smoke(config: &PipelineConfig) -> Result<StageReport> {
    let artifacts = Artifacts::new(&config.out_dir);
    artifacts.ensure()?;
    let stack = load_stack(config, &artifacts)?;
    let smoke = build_smoke_map(
        &stack,
        &config.smoke.weights(),
        config.smoke.regions,
        config.smoke.window,
        config.smoke.epsilon,
    )?;
    io::write_pfm(&artifacts.smoke_f(), &smoke.f)?;
    io::write_label_png(
        &artifacts.smoke_labels_view(),
        &smoke.labels,
        smoke.f.width(),
        smoke.f.height(),
        smoke.m,
    )?;
    write_raw_labels(&artifacts.smoke_labels_raw(), &smoke.labels, smoke.f.width(), smoke.f.height())?;
    let regions = SmokeRegions {
        m: smoke.m,
        region_stats: smoke.region_stats.clone(),
        alpha: smoke.weights.alpha,
        beta: smoke.weights.beta,
        gamma: smoke.weights.gamma,
        sigma: smoke.weights.sigma,
    };
    let json = serde_json::to_string_pretty(&regions)
        .map_err(|e| Error::Input(format!("smoke regions: {e}")))?;
    fs::write(artifacts.smoke_regions(), json)?;
    let mut report = StageReport::new("smoke");
    report.count("regions", smoke.m as u64);
    report.write(&artifacts)?;
    Ok(report)
}

fn write_raw_labels(path: &Path, labels: &[u8], width: usize, height: usize) -> Result<()> {
    let buf: image::ImageBuffer<image::Luma<u8>, Vec<u8>> =
        image::ImageBuffer::from_vec(width as u32, height as u32, labels.to_vec())
            .ok_or_else(|| Error::Dimension("label buffer".into()))?;
    buf.save(path).map_err(|e| Error::Input(format!("png write {path:?}: {e}")))
}

fn load_smoke_map(config: &PipelineConfig, artifacts: &Artifacts) -> Result<SmokeMap> {
    config.require_paths(&[
        ("smoke likelihood map", &artifacts.smoke_f()),
        ("smoke label image", &artifacts.smoke_labels_raw()),
        ("smoke region stats", &artifacts.smoke_regions()),
    ])?;
    let f = io::read_pfm(&artifacts.smoke_f())?;
    let img = image::open(artifacts.smoke_labels_raw())
        .map_err(|e| Error::Input(format!("labels: {e}")))?
        .into_luma8();
    let labels: Vec<u8> = img.into_raw();
    let text = fs::read_to_string(artifacts.smoke_regions())?;
    let regions: SmokeRegions = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { offset: e.column() as u64, msg: format!("regions: {e}") })?;
    Ok(SmokeMap {
        f,
        weights: crate::smoke::SmokeWeights {
            alpha: regions.alpha,
            beta: regions.beta,
            gamma: regions.gamma,
            sigma: regions.sigma,
        },
        labels,
        m: regions.m,
        region_stats: regions.region_stats,
    })
}

// ---------------------------------------------------------------------------
// Stage: fuse
// ---------------------------------------------------------------------------

pub fn cmd_fuse(config: &PipelineConfig) -> Result<StageReport> {
    let artifacts = Artifacts::new(&config.out_dir);
    artifacts.ensure()?;
    let stack = load_stack(config, &artifacts)?;
    let smoke = if stack.k() == 1 {
        // Single exposure: fusion degenerates to identity; a trivial
        // single-region map is sufficient and requires no smoke stage.
        SmokeMap {
            f: Image::new(stack.width(), stack.height()),
            weights: config.smoke.weights(),
            labels: vec![1u8; stack.width() * stack.height()],
            m: 1,
            region_stats: vec![(0.0, 0.0)],
        }
    } else {
        load_smoke_map(config, &artifacts)?
    };
    let hdr = fuse_stack(&stack, &smoke, &config.fusion.params(), config.hash())?;
    io::write_pfm(&artifacts.hdr(), &hdr.values)?;
    let preview = tone_map_preview(&hdr.values);
    let buf: image::ImageBuffer<image::Luma<u8>, Vec<u8>> = image::ImageBuffer::from_vec(
        hdr.values.width() as u32,
        hdr.values.height() as u32,
        preview,
    )
    .ok_or_else(|| Error::Dimension("preview buffer".into()))?;
    buf.save(artifacts.hdr_preview())
        .map_err(|e| Error::Input(format!("preview write: {e}")))?;
    let mut report = StageReport::new("fuse");
    report.count("exposures", stack.k() as u64);
    report.write(&artifacts)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Stage: extract
// ---------------------------------------------------------------------------

/// One gated per-view particle observation, as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub view: String,
    /// Window start, µs.
    pub t_us: i64,
    pub state: String,
    pub centroid_px: [f64; 2],
    pub pixel_area: f64,
    pub velocity_px_per_us: [f64; 2],
    pub polygon: Vec<[f64; 2]>,
    pub events_used: usize,
}

fn state_name(state: ParticleState) -> &'static str {
    match state {
        ParticleState::Combusting => "combusting",
        ParticleState::Extinguished => "extinguished",
        ParticleState::Partial => "partial",
        ParticleState::Unclassifiable => "unclassifiable",
    }
}

fn load_stream(path: &Path, view: ViewId, dims: (u16, u16)) -> Result<EventStream> {
    let file = fs::File::open(path).map_err(|e| Error::Input(format!("events {path:?}: {e}")))?;
    let is_csv = path.extension().map(|e| e == "csv").unwrap_or(false);
    let events = if is_csv {
        read_events_csv(BufReader::new(file))?
    } else {
        read_events_binary(BufReader::new(file))?
    };
    EventStream::new(view, events, dims)
}

/// Homography registering a view onto the frame sensor, induced by the
/// fronto-parallel working plane at `plane_z` mm in the world frame. The
/// frame sensor is co-sited with the left camera, so the left view maps
/// through the identity.
fn view_registration(rig: &StereoRig, view: ViewId, plane_z: f64) -> Registration {
    match view {
        ViewId::Left => Registration::identity(),
        ViewId::Right => {
            let kl = Matrix3::new(
                rig.left.focal_px,
                0.0,
                rig.left.principal_point.0,
                0.0,
                rig.left.focal_px,
                rig.left.principal_point.1,
                0.0,
                0.0,
                1.0,
            );
            let kr = Matrix3::new(
                rig.right.focal_px,
                0.0,
                rig.right.principal_point.0,
                0.0,
                rig.right.focal_px,
                rig.right.principal_point.1,
                0.0,
                0.0,
                1.0,
            );
            // Left-to-right homography for the plane n = (0,0,1), depth d:
            // H_lr = K_r (R + t n^T / d) K_l^{-1}; we need its inverse.
            let n_over_d = nalgebra::RowVector3::new(0.0, 0.0, 1.0 / plane_z);
            let h_lr = kr * (rig.right.rotation + rig.right.translation * n_over_d)
                * kl.try_inverse().expect("intrinsics invertible");
            let h = h_lr.try_inverse().unwrap_or_else(Matrix3::identity);
            Registration { homography: h }
        }
    }
}

fn extract_view(
    config: &PipelineConfig,
    stream: &EventStream,
    hdr: &Image,
    smoke: &SmokeMap,
    registration: &Registration,
    theta_vis: f64,
    report: &mut StageReport,
) -> Result<Vec<ObservationRecord>> {
    let view_name = match stream.view_id {
        ViewId::Left => "left",
        ViewId::Right => "right",
    };
    let cluster_params = config.events.cluster_params();
    let classify_params = ClassifyParams {
        theta_pos: config.events.theta_pos,
        ..ClassifyParams::default()
    };
    let gate_params = GateParams { theta_vis, ..GateParams::default() };
    let window = config.events.window_us;
    let mut records = Vec::new();
    let mut clustered_events = 0u64;
    let mut gated_events = 0u64;
    let mut rejected = BTreeMap::from([
        ("small", 0u64),
        ("unclassifiable", 0),
        ("gate", 0),
        ("select", 0),
        ("degenerate", 0),
    ]);
    if let (Some(first), Some(last)) = (stream.events.first(), stream.events.last()) {
        // Snap windows to a global grid so both views share window starts.
        let mut t0 = first.t_us.div_euclid(window) * window;
        while t0 <= last.t_us {
            let t1 = t0 + window;
            let lo = stream.events.partition_point(|e| e.t_us < t0);
            let hi = stream.events.partition_point(|e| e.t_us < t1);
            let slice = &stream.events[lo..hi];
            for cluster in cluster_events(slice, &cluster_params) {
                if cluster.events.len() < config.events.min_cluster_events {
                    *rejected.get_mut("small").unwrap() += 1;
                    continue;
                }
                clustered_events += cluster.events.len() as u64;
                let state = classify_state(&cluster, hdr, registration, &classify_params);
                if state == ParticleState::Unclassifiable {
                    *rejected.get_mut("unclassifiable").unwrap() += 1;
                    continue;
                }
                if !hdr_gate(&cluster, smoke, hdr, registration, &gate_params) {
                    *rejected.get_mut("gate").unwrap() += 1;
                    continue;
                }
                let selected = match select_geometry_events(&cluster, state) {
                    Ok(s) => s,
                    Err(_) => {
                        *rejected.get_mut("select").unwrap() += 1;
                        continue;
                    }
                };
                let (coords, velocity): (Vec<CompensatedEvent>, Vector2<f64>) =
                    if state == ParticleState::Partial {
                        let comp = motion_compensate(&selected, t0, window);
                        let v = comp.velocity.unwrap_or_else(Vector2::zeros);
                        (comp.events, v)
                    } else {
                        (
                            selected
                                .iter()
                                .map(|e| CompensatedEvent {
                                    t_us: e.t_us,
                                    x: e.u as f64,
                                    y: e.v as f64,
                                    p: e.p,
                                })
                                .collect(),
                            Vector2::zeros(),
                        )
                    };
                let pts: Vec<(f64, f64)> = coords.iter().map(|e| (e.x, e.y)).collect();
                let contour = match contour_extract(&pts, config.events.alpha_radius_px) {
                    Ok(c) => c,
                    Err(Error::DegenerateObservation(_)) => {
                        *rejected.get_mut("degenerate").unwrap() += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                gated_events += coords.len() as u64;
                // Events carry integer pixel coordinates, so the polygon runs
                // through outermost pixel centers and clips half a pixel of
                // boundary everywhere. Dilate by half a pixel (Minkowski:
                // A + P/2 + pi/4) to size the pixelated footprint itself.
                let perimeter: f64 = contour
                    .polygon
                    .iter()
                    .zip(contour.polygon.iter().cycle().skip(1))
                    .map(|(a, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
                    .take(contour.polygon.len())
                    .sum();
                let footprint_area =
                    contour.pixel_area + perimeter / 2.0 + std::f64::consts::FRAC_PI_4;
                records.push(ObservationRecord {
                    view: view_name.to_string(),
                    t_us: t0,
                    state: state_name(state).to_string(),
                    centroid_px: [contour.centroid.0, contour.centroid.1],
                    pixel_area: footprint_area,
                    velocity_px_per_us: [velocity.x, velocity.y],
                    polygon: contour.polygon.iter().map(|&(x, y)| [x, y]).collect(),
                    events_used: coords.len(),
                });
            }
            t0 = t1;
        }
    }
    report.count(&format!("events_in_{view_name}"), stream.events.len() as u64);
    report.count(&format!("events_clustered_{view_name}"), clustered_events);
    report.count(&format!("events_gated_{view_name}"), gated_events.min(clustered_events));
    report.count(&format!("observations_{view_name}"), records.len() as u64);
    for (reason, n) in &rejected {
        report.count(&format!("rejected_{reason}_{view_name}"), *n);
    }
    Ok(records)
}

pub fn cmd_extract(config: &PipelineConfig) -> Result<StageReport> {
    let artifacts = Artifacts::new(&config.out_dir);
    artifacts.ensure()?;
    let calib_path =
        config.inputs.calibration.clone().unwrap_or_else(|| artifacts.calibration());
    config.require_paths(&[
        ("calibration", &calib_path),
        ("fused frame", &artifacts.hdr()),
    ])?;
    let rig = io::read_calibration(&calib_path)?.to_rig()?;
    let hdr = io::read_pfm(&artifacts.hdr())?;
    let smoke = load_smoke_map(config, &artifacts)?;
    let theta_vis =
        config.events.theta_vis.unwrap_or_else(|| smoke.default_visibility_threshold());
    let mut report = StageReport::new("extract");
    for view in [ViewId::Left, ViewId::Right] {
        let default_path = artifacts.events(view);
        let path = match view {
            ViewId::Left => config.inputs.events_left.clone(),
            ViewId::Right => config.inputs.events_right.clone(),
        }
        .unwrap_or(default_path);
        config.require_paths(&[("event stream", &path)])?;
        let cam = match view {
            ViewId::Left => &rig.left,
            ViewId::Right => &rig.right,
        };
        let dims = (cam.sensor_dims.0 as u16, cam.sensor_dims.1 as u16);
        let stream = load_stream(&path, view, dims)?;
        let registration = view_registration(&rig, view, config.events.registration_plane_mm);
        let records =
            extract_view(config, &stream, &hdr, &smoke, &registration, theta_vis, &mut report)?;
        let json = serde_json::to_string_pretty(&records)
            .map_err(|e| Error::Input(format!("observations: {e}")))?;
        fs::write(artifacts.observations(view), json)?;
    }
    report.write(&artifacts)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Stage: measure
// ---------------------------------------------------------------------------

fn load_observations(path: &Path) -> Result<Vec<ObservationRecord>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Input(format!("observations {path:?}: {e}")))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parse { offset: e.column() as u64, msg: format!("observations: {e}") })
}

pub fn cmd_measure(config: &PipelineConfig) -> Result<StageReport> {
    let artifacts = Artifacts::new(&config.out_dir);
    artifacts.ensure()?;
    let calib_path =
        config.inputs.calibration.clone().unwrap_or_else(|| artifacts.calibration());
    config.require_paths(&[
        ("calibration", &calib_path),
        ("left observations", &artifacts.observations(ViewId::Left)),
        ("right observations", &artifacts.observations(ViewId::Right)),
    ])?;
    let rig = io::read_calibration(&calib_path)?.to_rig()?;
    let axis = ColumnAxis::new(
        nalgebra::Vector3::from(config.stereo.column_p1_mm),
        nalgebra::Vector3::from(config.stereo.column_p2_mm),
    )?;
    let to_view_obs = |records: &[ObservationRecord]| -> Vec<ViewObservation> {
        records
            .iter()
            .map(|r| ViewObservation {
                t_us: r.t_us,
                centroid_px: Vector2::new(r.centroid_px[0], r.centroid_px[1]),
                pixel_area: r.pixel_area,
            })
            .collect()
    };
    let left = load_observations(&artifacts.observations(ViewId::Left))?;
    let right = load_observations(&artifacts.observations(ViewId::Right))?;
    let left_obs = to_view_obs(&left);
    let right_obs = to_view_obs(&right);
    let matches = epipolar_match(
        &rig,
        &left_obs,
        &right_obs,
        config.stereo.max_epi_px,
        config.stereo.max_dt_us,
    )?;
    let mut measurements: Vec<ParticleMeasurement> = Vec::new();
    for &(i, j, _) in &matches {
        match measure_pair(&rig, &axis, &left_obs[i], &right_obs[j], config.stereo.literal_scale) {
            Ok(m) => measurements.push(m),
            Err(Error::DegenerateObservation(_)) | Err(Error::IllConditioned(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let mut file = fs::File::create(artifacts.measurements_csv())?;
    io::write_measurements_csv(&mut file, &measurements)?;
    let json = serde_json::to_string_pretty(&measurements)
        .map_err(|e| Error::Input(format!("measurements: {e}")))?;
    fs::write(artifacts.measurements_json(), json)?;
    let mut report = StageReport::new("measure");
    report.count("observations_left", left.len() as u64);
    report.count("observations_right", right.len() as u64);
    report.count("matched", matches.len() as u64);
    report.count("measurements", measurements.len() as u64);
    if measurements.is_empty() {
        report.notes.push("zero matched particles".to_string());
    }
    report.write(&artifacts)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Stage: report
// ---------------------------------------------------------------------------

pub fn cmd_report(config: &PipelineConfig) -> Result<StageReport> {
    let artifacts = Artifacts::new(&config.out_dir);
    artifacts.ensure()?;
    config.require_paths(&[("measurements", &artifacts.measurements_json())])?;
    let text = fs::read_to_string(artifacts.measurements_json())?;
    let measurements: Vec<ParticleMeasurement> = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { offset: e.column() as u64, msg: format!("measurements: {e}") })?;

    let mut counts = BTreeMap::new();
    let mut notes = Vec::new();
    // Merge the fragments every prior stage left behind.
    for stage in ["simulate", "reconstruct", "smoke", "fuse", "extract", "measure"] {
        let path = artifacts.fragment(stage);
        if !path.exists() {
            continue;
        }
        let fragment: StageReport = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| Error::Parse { offset: e.column() as u64, msg: format!("fragment: {e}") })?;
        for (k, v) in fragment.counts {
            counts.insert(format!("{stage}.{k}"), v);
        }
        notes.extend(fragment.notes);
    }

    let mut modes = Vec::new();
    if measurements.is_empty() {
        notes.push("zero matched particles".to_string());
        io::write_histogram_png(&artifacts.histogram_png(), &[], &[])?;
        io::write_scatter_png(&artifacts.dh_plot_png(), &[])?;
    } else {
        let hist = size_histogram(
            &measurements,
            config.stereo.bin_width_mm,
            config.stereo.prominence,
        )?;
        let marked: Vec<usize> = hist
            .modes
            .iter()
            .map(|&m| (m / hist.bin_width - 0.5).round() as usize)
            .collect();
        io::write_histogram_png(&artifacts.histogram_png(), &hist.counts, &marked)?;
        let samples: Vec<(f64, f64)> =
            measurements.iter().map(|m| (m.t_us as f64, m.dh_mm)).collect();
        io::write_scatter_png(&artifacts.dh_plot_png(), &samples)?;
        modes = hist.modes;
    }

    let run_report = RunReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        counts,
        histogram_modes_mm: modes,
        measurement_csv: artifacts
            .measurements_csv()
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        notes,
    };
    let json = serde_json::to_string_pretty(&run_report)
        .map_err(|e| Error::Input(format!("report: {e}")))?;
    fs::write(artifacts.report(), json)?;
    let mut report = StageReport::new("report");
    report.count("measurements", measurements.len() as u64);
    report.write(&artifacts)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Stage: run (everything)
// ---------------------------------------------------------------------------

pub fn cmd_run(config: &PipelineConfig) -> Result<Timings> {
    let mut timings = Timings::default();
    // Simulate only when no external mosaic is supplied; a real capture run
    // starts at reconstruct.
    if config.inputs.mosaic.is_none() {
        timed(&mut timings, "simulate", || cmd_simulate(config))?;
    }
    timed(&mut timings, "reconstruct", || cmd_reconstruct(config))?;
    timed(&mut timings, "smoke", || cmd_smoke(config))?;
    timed(&mut timings, "fuse", || cmd_fuse(config))?;
    timed(&mut timings, "extract", || cmd_extract(config))?;
    timed(&mut timings, "measure", || cmd_measure(config))?;
    timed(&mut timings, "report", || cmd_report(config))?;
    timings.write(&config.out_dir)?;
    Ok(timings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_maps_working_plane_points_between_views() {
        let rig = crate::stereo::default_rig();
        let reg = view_registration(&rig, ViewId::Right, 100.0);
        // A world point on the z = 100 plane, projected without distortion
        // into both views, must map right -> left through the homography.
        let undistorted = |cam: &crate::stereo::CameraModel, p: &nalgebra::Vector3<f64>| {
            let pc = cam.rotation * p + cam.translation;
            Vector2::new(
                cam.focal_px * pc.x / pc.z + cam.principal_point.0,
                cam.focal_px * pc.y / pc.z + cam.principal_point.1,
            )
        };
        for &(x, y) in &[(0.0, 0.0), (5.0, -3.0), (-4.0, 8.0)] {
            let p = nalgebra::Vector3::new(x, y, 100.0);
            let l = undistorted(&rig.left, &p);
            let r = undistorted(&rig.right, &p);
            let (mx, my) = reg.map(r.x, r.y);
            assert!((mx - l.x).abs() < 1e-6 && (my - l.y).abs() < 1e-6, "({mx},{my}) vs {l}");
        }
    }

    #[test]
    fn artifact_paths_are_stable() {
        let a = Artifacts::new(Path::new("/tmp/out"));
        assert_eq!(a.mosaic(), PathBuf::from("/tmp/out/artifacts/mosaic.png"));
        assert_eq!(
            a.events(ViewId::Right),
            PathBuf::from("/tmp/out/artifacts/events_right.evt")
        );
    }
}
