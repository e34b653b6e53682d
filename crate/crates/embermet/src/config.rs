//! Declarative run configuration: one JSON document with per-stage sections,
//! all defaulted, plus validation and a reproducible content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::event::ClusterParams;
use crate::fusion::FusionParams;
use crate::smoke::SmokeWeights;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct InputsConfig {
    /// Raw quad-exposure mosaic (16-bit PNG). Defaults to the simulate
    /// stage's artifact when absent.
    pub mosaic: Option<PathBuf>,
    pub events_left: Option<PathBuf>,
    pub events_right: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    /// Scene description consumed by the simulate stage.
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MosaicConfig {
    pub transmittances: [f64; 4],
    pub bit_depth: u32,
    /// Exposure index at each 2x2 cell position, row-major.
    pub layout: [usize; 4],
    /// Divide each exposure by its transmittance to a common radiometric scale.
    pub rescale_by_tau: bool,
}

impl Default for MosaicConfig {
    fn default() -> Self {
        Self {
            transmittances: [1.0, 0.5, 0.25, 0.125],
            bit_depth: 12,
            layout: [0, 1, 2, 3],
            rescale_by_tau: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SmokeConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    /// Requested region count M for segmentation.
    pub regions: usize,
    /// Window (px) for the dark/bright channel extrema.
    pub window: usize,
    pub epsilon: f64,
}

impl Default for SmokeConfig {
    fn default() -> Self {
        let w = SmokeWeights::default();
        Self {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            sigma: w.sigma,
            regions: 4,
            window: 7,
            epsilon: 1e-6,
        }
    }
}

impl SmokeConfig {
    pub fn weights(&self) -> SmokeWeights {
        SmokeWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub psi: f64,
    pub delta: f64,
    pub levels: usize,
    pub epsilon: f64,
    pub guided_radius_divisor: usize,
    pub guided_regularization: f64,
    pub feather_radius: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        let p = FusionParams::default();
        Self {
            psi: p.psi,
            delta: p.delta,
            levels: p.levels,
            epsilon: p.epsilon,
            guided_radius_divisor: p.guided_radius_divisor,
            guided_regularization: p.guided_regularization,
            feather_radius: p.feather_radius,
        }
    }
}

impl FusionConfig {
    pub fn params(&self) -> FusionParams {
        FusionParams {
            psi: self.psi,
            delta: self.delta,
            levels: self.levels,
            epsilon: self.epsilon,
            guided_radius_divisor: self.guided_radius_divisor,
            guided_regularization: self.guided_regularization,
            feather_radius: self.feather_radius,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EventsConfig {
    /// Clustering spatial radius, px.
    pub spatial_radius_px: f64,
    /// Clustering temporal radius, µs.
    pub temporal_radius_us: i64,
    /// Minimum core neighborhood size.
    pub min_core: usize,
    /// Processing window length, µs.
    pub window_us: i64,
    /// Positive-polarity fraction for the combusting rule.
    pub theta_pos: f64,
    /// Visibility gate on mean smoke likelihood; None derives it from the
    /// segmented smoke map (boundary of the two smokiest regions).
    pub theta_vis: Option<f64>,
    /// Alpha-shape circumradius bound for contour extraction, px.
    pub alpha_radius_px: f64,
    /// Clusters smaller than this are dropped before gating.
    pub min_cluster_events: usize,
    /// Depth (mm, left frame) of the plane inducing the right-view to frame
    /// registration homography.
    pub registration_plane_mm: f64,
}

impl Default for EventsConfig {
    fn default() -> Self {
        let c = ClusterParams::default();
        Self {
            spatial_radius_px: c.spatial_radius_px,
            temporal_radius_us: c.temporal_radius_us,
            min_core: c.min_core,
            window_us: 1000,
            theta_pos: 0.8,
            theta_vis: None,
            alpha_radius_px: 4.0,
            min_cluster_events: 20,
            registration_plane_mm: 100.0,
        }
    }
}

impl EventsConfig {
    pub fn cluster_params(&self) -> ClusterParams {
        ClusterParams {
            spatial_radius_px: self.spatial_radius_px,
            temporal_radius_us: self.temporal_radius_us,
            min_core: self.min_core,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StereoConfig {
    /// Epipolar distance gate, px.
    pub max_epi_px: f64,
    /// Cross-view time gate, µs.
    pub max_dt_us: i64,
    /// Apply the pixel-pitch scale formula literally instead of the
    /// dimensionally consistent reading.
    pub literal_scale: bool,
    /// Size-histogram bin width, mm.
    pub bin_width_mm: f64,
    /// Mode prominence as a fraction of the peak bin.
    pub prominence: f64,
    /// Column endpoints in the world (left camera) frame, mm.
    pub column_p1_mm: [f64; 3],
    pub column_p2_mm: [f64; 3],
}

impl Default for StereoConfig {
    fn default() -> Self {
        Self {
            max_epi_px: 3.0,
            max_dt_us: 500,
            literal_scale: false,
            bin_width_mm: 0.25,
            prominence: 0.25,
            column_p1_mm: [0.0, -8.0, 100.0],
            column_p2_mm: [0.0, 12.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    /// Log-intensity units per event.
    pub contrast_threshold: f64,
    pub event_noise_rate: f64,
    pub pixel_jitter_sigma: f64,
    /// Integrate-and-fire grid step, µs.
    pub time_step_us: i64,
    pub eddy_events: usize,
    /// Scene time at which the frame sensor is exposed, µs.
    pub frame_time_us: i64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            contrast_threshold: 0.1,
            event_noise_rate: 0.0,
            pixel_jitter_sigma: 0.0,
            time_step_us: 100,
            eddy_events: 80,
            frame_time_us: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub inputs: InputsConfig,
    pub mosaic: MosaicConfig,
    pub smoke: SmokeConfig,
    pub fusion: FusionConfig,
    pub events: EventsConfig,
    pub stereo: StereoConfig,
    pub simulate: SimulateConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; outputs never depend on this.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: InputsConfig::default(),
            mosaic: MosaicConfig::default(),
            smoke: SmokeConfig::default(),
            fusion: FusionConfig::default(),
            events: EventsConfig::default(),
            stereo: StereoConfig::default(),
            simulate: SimulateConfig::default(),
            out_dir: PathBuf::from("out"),
            seed: 7,
            threads: 1,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("config {path:?}: {e}")))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { offset: e.column() as u64, msg: format!("config: {e}") })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.smoke.weights().validate()?;
        if self.smoke.regions < 2 || self.smoke.regions > 8 {
            return Err(Error::Config(format!("regions = {} out of [2, 8]", self.smoke.regions)));
        }
        if self.smoke.window == 0 || self.smoke.window % 2 == 0 {
            return Err(Error::Config("smoke window must be odd and positive".into()));
        }
        let tau = &self.mosaic.transmittances;
        if tau.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::Config(format!("transmittances {tau:?} outside (0, 1]")));
        }
        if !(1..=16).contains(&self.mosaic.bit_depth) {
            return Err(Error::Config(format!("bit depth {} out of [1, 16]", self.mosaic.bit_depth)));
        }
        if self.fusion.levels == 0 || self.fusion.psi <= 0.0 || self.fusion.delta <= 0.0 {
            return Err(Error::Config("fusion params must be positive".into()));
        }
        if self.events.spatial_radius_px <= 0.0
            || self.events.temporal_radius_us <= 0
            || self.events.window_us <= 0
            || self.events.min_core == 0
        {
            return Err(Error::Config("event params must be positive".into()));
        }
        if !(0.5..=1.0).contains(&self.events.theta_pos) {
            return Err(Error::Config(format!(
                "theta_pos = {} out of [0.5, 1.0]",
                self.events.theta_pos
            )));
        }
        if let Some(tv) = self.events.theta_vis {
            if !(0.0..=1.0).contains(&tv) {
                return Err(Error::Config(format!("theta_vis = {tv} out of [0, 1]")));
            }
        }
        if self.stereo.max_epi_px <= 0.0 || self.stereo.bin_width_mm <= 0.0 {
            return Err(Error::Config("stereo gates must be positive".into()));
        }
        if self.simulate.contrast_threshold <= 0.0 {
            return Err(Error::Config("contrast threshold must be positive".into()));
        }
        Ok(())
    }

    /// Verifies that every path required by a stage exists.
    pub fn require_paths(&self, paths: &[(&str, &Path)]) -> Result<()> {
        for (name, p) in paths {
            if !p.exists() {
                return Err(Error::Input(format!("missing {name}: {}", p.display())));
            }
        }
        Ok(())
    }

    /// Content hash of the canonical JSON encoding; identifies a run.
    ///
    /// The output directory and thread count are excluded: neither affects
    /// the artifacts, so two runs that differ only in where they write or
    /// how many workers they use share a hash.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = PathBuf::new();
        canon.threads = 0;
        let json = serde_json::to_string(&canon).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}
