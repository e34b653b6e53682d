//! Event-stream ingestion and per-view particle observation extraction.
//!
//! The stages here take a time-ordered stream of polarity events and turn it
//! into per-window particle observations: density-based spatiotemporal
//! clustering, radiative-state classification against the fused intensity
//! frame, motion compensation of drifting clusters, visibility gating
//! against the smoke-likelihood map, and contour extraction via an
//! alpha-shape envelope.

use std::io::{BufRead, Read, Write};

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::smoke::SmokeMap;

/// A single polarity event. Times are microseconds since the frame trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t_us: i64,
    pub u: u16,
    pub v: u16,
    /// +1 or -1. The value 0 is reserved on disk for the trigger marker and
    /// never appears in a validated stream.
    pub p: i8,
}

/// Which camera of the stereo pair a stream came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewId {
    Left,
    Right,
}

/// Maximum residual synchronization offset between the two views.
pub const MAX_SYNC_OFFSET_US: i64 = 12;

/// A validated, time-sorted stream of events from one camera.
#[derive(Debug, Clone)]
pub struct EventStream {
    pub view_id: ViewId,
    pub events: Vec<Event>,
    /// (width, height) of the sensor in pixels.
    pub sensor_dims: (u16, u16),
    /// Residual hardware sync offset bound in microseconds.
    pub sync_offset_us: i64,
}

impl EventStream {
    /// Builds a stream, sorting events by timestamp (stable) and validating
    /// bounds and polarities. Out-of-order input is accepted with a warning.
    pub fn new(view_id: ViewId, mut events: Vec<Event>, sensor_dims: (u16, u16)) -> Result<Self> {
        if !events.windows(2).all(|w| w[0].t_us <= w[1].t_us) {
            log::warn!("event stream not time-ordered; sorting");
            events.sort_by_key(|e| e.t_us);
        }
        for e in &events {
            if e.t_us < 0 {
                return Err(Error::Input(format!("negative event timestamp {}", e.t_us)));
            }
            if e.u >= sensor_dims.0 || e.v >= sensor_dims.1 {
                return Err(Error::Input(format!(
                    "event at ({},{}) outside {}x{} sensor",
                    e.u, e.v, sensor_dims.0, sensor_dims.1
                )));
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::Input(format!("invalid polarity {}", e.p)));
            }
        }
        Ok(Self { view_id, events, sensor_dims, sync_offset_us: MAX_SYNC_OFFSET_US })
    }
}

// ---------------------------------------------------------------------------
// Codecs
// ---------------------------------------------------------------------------

/// Rebase timestamps so the trigger marker (p = 0) sits at t = 0, dropping
/// the marker itself and any events that precede it.
pub fn rebase_trigger(records: Vec<Event>) -> Vec<Event> {
    match records.iter().find(|e| e.p == 0) {
        Some(trigger) => {
            let t0 = trigger.t_us;
            records
                .into_iter()
                .filter(|e| e.p != 0 && e.t_us >= t0)
                .map(|e| Event { t_us: e.t_us - t0, ..e })
                .collect()
        }
        None => records,
    }
}

/// Reads events from CSV with header `t_us,u,v,p`. A record with p = 0 is a
/// trigger marker and rebases all timestamps to it.
pub fn read_events_csv<R: BufRead>(reader: R) -> Result<Vec<Event>> {
    let mut records = Vec::new();
    let mut offset = 0u64;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(Error::Io)?;
        let line_len = (line.len() + 1) as u64;
        let trimmed = line.trim();
        if line_no == 0 {
            if trimmed != "t_us,u,v,p" {
                return Err(Error::Parse {
                    offset: 0,
                    msg: format!("expected header 't_us,u,v,p', found '{trimmed}'"),
                });
            }
            offset += line_len;
            continue;
        }
        if trimmed.is_empty() {
            offset += line_len;
            continue;
        }
        let mut fields = trimmed.split(',');
        let parse_field = |s: Option<&str>, name: &str, offset: u64| -> Result<i64> {
            s.ok_or_else(|| Error::Parse { offset, msg: format!("missing field '{name}'") })?
                .trim()
                .parse::<i64>()
                .map_err(|e| Error::Parse { offset, msg: format!("bad {name}: {e}") })
        };
        let t = parse_field(fields.next(), "t_us", offset)?;
        let u = parse_field(fields.next(), "u", offset)?;
        let v = parse_field(fields.next(), "v", offset)?;
        let p = parse_field(fields.next(), "p", offset)?;
        if fields.next().is_some() {
            return Err(Error::Parse { offset, msg: "too many fields".into() });
        }
        if !(0..=u16::MAX as i64).contains(&u) || !(0..=u16::MAX as i64).contains(&v) {
            return Err(Error::Parse { offset, msg: format!("coordinate out of range: {u},{v}") });
        }
        if !(-1..=1).contains(&p) {
            return Err(Error::Parse { offset, msg: format!("polarity out of range: {p}") });
        }
        records.push(Event { t_us: t, u: u as u16, v: v as u16, p: p as i8 });
        offset += line_len;
    }
    Ok(rebase_trigger(records))
}

/// Writes events as CSV with header `t_us,u,v,p`.
pub fn write_events_csv<W: Write>(writer: &mut W, events: &[Event]) -> Result<()> {
    writeln!(writer, "t_us,u,v,p").map_err(Error::Io)?;
    for e in events {
        writeln!(writer, "{},{},{},{}", e.t_us, e.u, e.v, e.p).map_err(Error::Io)?;
    }
    Ok(())
}

const BINARY_MAGIC: &[u8; 4] = b"EVT1";
const BINARY_RECORD_LEN: usize = 9;

/// Reads the little-endian binary event format: magic "EVT1", u32 record
/// count, then (u32 t_us, u16 u, u16 v, i8 p) records. A p = 0 record is the
/// trigger marker.
pub fn read_events_binary<R: Read>(mut reader: R) -> Result<Vec<Event>> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|_| Error::Parse {
        offset: 0,
        msg: "truncated header: missing magic".into(),
    })?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Parse { offset: 0, msg: format!("bad magic {magic:?}") });
    }
    let mut count_buf = [0u8; 4];
    reader.read_exact(&mut count_buf).map_err(|_| Error::Parse {
        offset: 4,
        msg: "truncated header: missing count".into(),
    })?;
    let count = u32::from_le_bytes(count_buf) as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    let mut buf = [0u8; BINARY_RECORD_LEN];
    for i in 0..count {
        let offset = (8 + i * BINARY_RECORD_LEN) as u64;
        reader.read_exact(&mut buf).map_err(|_| Error::Parse {
            offset,
            msg: format!("truncated record {i} of {count}"),
        })?;
        let t = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as i64;
        let u = u16::from_le_bytes([buf[4], buf[5]]);
        let v = u16::from_le_bytes([buf[6], buf[7]]);
        let p = buf[8] as i8;
        if !(-1..=1).contains(&p) {
            return Err(Error::Parse { offset, msg: format!("polarity out of range: {p}") });
        }
        records.push(Event { t_us: t, u, v, p });
    }
    Ok(rebase_trigger(records))
}

/// Writes the binary event format.
pub fn write_events_binary<W: Write>(writer: &mut W, events: &[Event]) -> Result<()> {
    writer.write_all(BINARY_MAGIC).map_err(Error::Io)?;
    let count = u32::try_from(events.len())
        .map_err(|_| Error::Input("too many events for binary format".into()))?;
    writer.write_all(&count.to_le_bytes()).map_err(Error::Io)?;
    for e in events {
        let t = u32::try_from(e.t_us)
            .map_err(|_| Error::Input(format!("timestamp {} not encodable as u32", e.t_us)))?;
        writer.write_all(&t.to_le_bytes()).map_err(Error::Io)?;
        writer.write_all(&e.u.to_le_bytes()).map_err(Error::Io)?;
        writer.write_all(&e.v.to_le_bytes()).map_err(Error::Io)?;
        writer.write_all(&[e.p as u8]).map_err(Error::Io)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

/// Density-based clustering parameters.
#[derive(Debug, Clone, Copy)]
pub struct ClusterParams {
    /// Spatial neighborhood radius in pixels.
    pub spatial_radius_px: f64,
    /// Temporal neighborhood radius in microseconds.
    pub temporal_radius_us: i64,
    /// Minimum neighborhood size (including the point itself) for a core point.
    pub min_core: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { spatial_radius_px: 4.0, temporal_radius_us: 500, min_core: 8 }
    }
}

/// A spatiotemporal cluster of events. Indices refer to the input slice.
#[derive(Debug, Clone)]
pub struct EventCluster {
    pub indices: Vec<usize>,
    pub events: Vec<Event>,
}

/// Density-based spatiotemporal clustering. An event is a neighbor of
/// another when their pixel distance is within the spatial radius and their
/// timestamps differ by at most the temporal radius. Core events (with at
/// least `min_core` neighbors, self included) chain into clusters; border
/// events join the first cluster that reaches them; the rest are noise.
pub fn cluster_events(events: &[Event], params: &ClusterParams) -> Vec<EventCluster> {
    let n = events.len();
    if n == 0 {
        return Vec::new();
    }
    let cell = params.spatial_radius_px.max(1.0).ceil() as i64;
    let mut grid: std::collections::BTreeMap<(i64, i64), Vec<usize>> = std::collections::BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        grid.entry((e.u as i64 / cell, e.v as i64 / cell)).or_default().push(i);
    }
    let r2 = params.spatial_radius_px * params.spatial_radius_px;
    let neighbors = |i: usize| -> Vec<usize> {
        let e = &events[i];
        let (cx, cy) = (e.u as i64 / cell, e.v as i64 / cell);
        let mut out = Vec::new();
        for gx in cx - 1..=cx + 1 {
            for gy in cy - 1..=cy + 1 {
                if let Some(ids) = grid.get(&(gx, gy)) {
                    for &j in ids {
                        let o = &events[j];
                        let du = e.u as f64 - o.u as f64;
                        let dv = e.v as f64 - o.v as f64;
                        if du * du + dv * dv <= r2
                            && (e.t_us - o.t_us).abs() <= params.temporal_radius_us
                        {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    };

    const UNVISITED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let mut label = vec![UNVISITED; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if label[i] != UNVISITED {
            continue;
        }
        let nbrs = neighbors(i);
        if nbrs.len() < params.min_core {
            label[i] = NOISE;
            continue;
        }
        let cid = clusters.len();
        label[i] = cid;
        let mut members = vec![i];
        let mut queue: std::collections::VecDeque<usize> = nbrs.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if label[j] == NOISE {
                label[j] = cid;
                members.push(j);
                continue;
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = cid;
            members.push(j);
            let jn = neighbors(j);
            if jn.len() >= params.min_core {
                queue.extend(jn);
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters
        .into_iter()
        .map(|indices| {
            let events = indices.iter().map(|&i| events[i]).collect();
            EventCluster { indices, events }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Radiative state of a clustered particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticleState {
    /// Bright, dominated by positive polarity.
    Combusting,
    /// Dark, edge-mixed polarity (annular event distribution).
    Extinguished,
    /// Hybrid polarity with interior events; needs motion compensation.
    Partial,
    /// Registered footprint falls outside the intensity frame.
    Unclassifiable,
}

/// Planar homography mapping event-view pixels into intensity-frame pixels.
#[derive(Debug, Clone)]
pub struct Registration {
    pub homography: Matrix3<f64>,
}

impl Registration {
    pub fn identity() -> Self {
        Self { homography: Matrix3::identity() }
    }

    /// Maps an event pixel to intensity-frame coordinates.
    pub fn map(&self, u: f64, v: f64) -> (f64, f64) {
        let q = self.homography * Vector3::new(u, v, 1.0);
        (q.x / q.z, q.y / q.z)
    }
}

/// Thresholds for the polarity/intensity classification rules.
#[derive(Debug, Clone, Copy)]
pub struct ClassifyParams {
    /// Positive-polarity fraction at or above which a bright cluster counts
    /// as actively combusting.
    pub theta_pos: f64,
    /// A footprint is "high-intensity" when its mean is at least this factor
    /// of the global frame mean.
    pub bright_ratio: f64,
    /// Mean/max radial ratio at or above which the event distribution counts
    /// as annular (edge-only). A uniformly filled disc sits near 2/3.
    pub annular_ratio: f64,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        Self { theta_pos: 0.8, bright_ratio: 1.0, annular_ratio: 0.8 }
    }
}

/// Deduplicated integer footprint of a cluster in intensity-frame pixels,
/// or None if any event registers outside the frame.
fn registered_footprint(
    cluster: &EventCluster,
    reg: &Registration,
    frame: &Image,
) -> Option<Vec<(usize, usize)>> {
    let mut px: Vec<(usize, usize)> = Vec::with_capacity(cluster.events.len());
    for e in &cluster.events {
        let (x, y) = reg.map(e.u as f64, e.v as f64);
        let (xi, yi) = (x.round(), y.round());
        if xi < 0.0 || yi < 0.0 || xi >= frame.width() as f64 || yi >= frame.height() as f64 {
            return None;
        }
        px.push((xi as usize, yi as usize));
    }
    px.sort_unstable();
    px.dedup();
    Some(px)
}

fn positive_fraction(cluster: &EventCluster) -> f64 {
    let pos = cluster.events.iter().filter(|e| e.p > 0).count();
    pos as f64 / cluster.events.len().max(1) as f64
}

/// Mean radial distance of the events from their centroid, normalized by the
/// maximum radial distance. Near 1 for a hollow ring, near 2/3 for a filled
/// disc.
fn radial_ratio(cluster: &EventCluster) -> f64 {
    let n = cluster.events.len() as f64;
    let cx = cluster.events.iter().map(|e| e.u as f64).sum::<f64>() / n;
    let cy = cluster.events.iter().map(|e| e.v as f64).sum::<f64>() / n;
    let radii: Vec<f64> = cluster
        .events
        .iter()
        .map(|e| ((e.u as f64 - cx).powi(2) + (e.v as f64 - cy).powi(2)).sqrt())
        .collect();
    let max_r = radii.iter().cloned().fold(0.0, f64::max);
    if max_r <= 0.0 {
        return 0.0;
    }
    radii.iter().sum::<f64>() / n / max_r
}

/// Classifies a cluster's radiative state from its polarity statistics and
/// its registered footprint in the fused intensity frame.
pub fn classify_state(
    cluster: &EventCluster,
    hdr: &Image,
    reg: &Registration,
    params: &ClassifyParams,
) -> ParticleState {
    let Some(footprint) = registered_footprint(cluster, reg, hdr) else {
        return ParticleState::Unclassifiable;
    };
    let fp_mean = footprint.iter().map(|&(x, y)| hdr.get(x, y)).sum::<f64>()
        / footprint.len().max(1) as f64;
    let bright = fp_mean >= params.bright_ratio * hdr.mean();
    let pos_frac = positive_fraction(cluster);
    if bright && pos_frac >= params.theta_pos {
        return ParticleState::Combusting;
    }
    let mixed = pos_frac < params.theta_pos && pos_frac > 1.0 - params.theta_pos;
    if !bright && mixed && radial_ratio(cluster) >= params.annular_ratio {
        return ParticleState::Extinguished;
    }
    ParticleState::Partial
}

/// Selects the event subset used for geometry: positive polarity only for
/// combusting clusters, everything otherwise.
pub fn select_geometry_events(cluster: &EventCluster, state: ParticleState) -> Result<Vec<Event>> {
    let selected: Vec<Event> = match state {
        ParticleState::Combusting => cluster.events.iter().filter(|e| e.p > 0).copied().collect(),
        ParticleState::Extinguished | ParticleState::Partial => cluster.events.clone(),
        ParticleState::Unclassifiable => {
            return Err(Error::DegenerateObservation("unclassifiable cluster".into()))
        }
    };
    if selected.is_empty() {
        return Err(Error::DegenerateObservation("no geometry events after selection".into()));
    }
    Ok(selected)
}

// ---------------------------------------------------------------------------
// Motion compensation
// ---------------------------------------------------------------------------

/// An event with sub-pixel (possibly warped) coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensatedEvent {
    pub t_us: i64,
    pub x: f64,
    pub y: f64,
    pub p: i8,
}

/// Result of motion compensation over one window.
#[derive(Debug, Clone)]
pub struct Compensation {
    pub events: Vec<CompensatedEvent>,
    /// Estimated velocity in px/µs, or None when a half-window was too
    /// sparse to estimate displacement.
    pub velocity: Option<Vector2<f64>>,
}

/// Warps event coordinates back to the window start under a constant
/// velocity: (x,y) - v * (t - t0). Applying the warp with v and then with -v
/// restores the original coordinates exactly.
pub fn warp(events: &[CompensatedEvent], velocity: Vector2<f64>, t0: i64) -> Vec<CompensatedEvent> {
    events
        .iter()
        .map(|e| {
            let dt = (e.t_us - t0) as f64;
            CompensatedEvent { x: e.x - velocity.x * dt, y: e.y - velocity.y * dt, ..*e }
        })
        .collect()
}

/// Estimates a locally constant velocity from the centroid displacement
/// between the two equal halves of the window [t0, t0 + dt] and warps all
/// coordinates back to t0. Events outside the window are ignored.
pub fn motion_compensate(events: &[Event], t0: i64, dt_us: i64) -> Compensation {
    let raw: Vec<CompensatedEvent> = events
        .iter()
        .filter(|e| e.t_us >= t0 && e.t_us < t0 + dt_us)
        .map(|e| CompensatedEvent { t_us: e.t_us, x: e.u as f64, y: e.v as f64, p: e.p })
        .collect();
    let mid = t0 + dt_us / 2;
    let half1: Vec<&CompensatedEvent> = raw.iter().filter(|e| e.t_us < mid).collect();
    let half2: Vec<&CompensatedEvent> = raw.iter().filter(|e| e.t_us >= mid).collect();
    if half1.len() < 2 || half2.len() < 2 {
        return Compensation { events: raw, velocity: None };
    }
    let centroid = |half: &[&CompensatedEvent]| {
        let n = half.len() as f64;
        (
            Vector2::new(
                half.iter().map(|e| e.x).sum::<f64>() / n,
                half.iter().map(|e| e.y).sum::<f64>() / n,
            ),
            half.iter().map(|e| e.t_us as f64).sum::<f64>() / n,
        )
    };
    let (c1, t1) = centroid(&half1);
    let (c2, t2) = centroid(&half2);
    if (t2 - t1).abs() < f64::EPSILON {
        return Compensation { events: raw, velocity: None };
    }
    // Displacement per unit time between the half-window mean timestamps;
    // exact for sampling of a constant-velocity trajectory.
    let velocity = (c2 - c1) / (t2 - t1);
    let events = warp(&raw, velocity, t0);
    Compensation { events, velocity: Some(velocity) }
}

// ---------------------------------------------------------------------------
// Visibility gating
// ---------------------------------------------------------------------------

/// Parameters for the smoke-visibility and radiative-signature gate.
#[derive(Debug, Clone, Copy)]
pub struct GateParams {
    /// Maximum mean smoke likelihood over the footprint for acceptance.
    pub theta_vis: f64,
    /// Footprint mean must exceed this factor of the surrounding mean for a
    /// compact local maximum.
    pub peak_ratio: f64,
    /// Alternatively, (max - min)/mean over the footprint at or above this
    /// counts as a high-contrast boundary.
    pub contrast_min: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        Self { theta_vis: 0.5, peak_ratio: 1.2, contrast_min: 0.5 }
    }
}

/// Accepts a cluster when its registered footprint is visible (mean smoke
/// likelihood at or below the threshold) and the intensity frame shows a
/// particle-like signature there: a compact local maximum relative to the
/// surrounding ring, or a high-contrast boundary. Acceptance is monotone in
/// `theta_vis`.
pub fn hdr_gate(
    cluster: &EventCluster,
    smoke: &SmokeMap,
    hdr: &Image,
    reg: &Registration,
    params: &GateParams,
) -> bool {
    let Some(footprint) = registered_footprint(cluster, reg, hdr) else {
        return false;
    };
    if footprint.is_empty() {
        return false;
    }
    let f_mean = smoke.mean_f_over(footprint.iter().copied());
    if f_mean > params.theta_vis {
        return false;
    }
    let fp_mean =
        footprint.iter().map(|&(x, y)| hdr.get(x, y)).sum::<f64>() / footprint.len() as f64;
    let fp_min = footprint.iter().map(|&(x, y)| hdr.get(x, y)).fold(f64::INFINITY, f64::min);
    let fp_max = footprint.iter().map(|&(x, y)| hdr.get(x, y)).fold(f64::NEG_INFINITY, f64::max);

    // Surrounding ring: a 3-pixel margin around the footprint bounding box.
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for &(x, y) in &footprint {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let margin = 3usize;
    let ox0 = x0.saturating_sub(margin);
    let oy0 = y0.saturating_sub(margin);
    let ox1 = (x1 + margin).min(hdr.width() - 1);
    let oy1 = (y1 + margin).min(hdr.height() - 1);
    let mut ring_sum = 0.0;
    let mut ring_n = 0usize;
    for y in oy0..=oy1 {
        for x in ox0..=ox1 {
            if x < x0 || x > x1 || y < y0 || y > y1 {
                ring_sum += hdr.get(x, y);
                ring_n += 1;
            }
        }
    }
    let compact_peak =
        ring_n > 0 && fp_mean > params.peak_ratio * (ring_sum / ring_n as f64 + 1e-12);
    let high_contrast = (fp_max - fp_min) / (fp_mean.abs() + 1e-12) >= params.contrast_min;
    compact_peak || high_contrast
}

// ---------------------------------------------------------------------------
// Contour extraction
// ---------------------------------------------------------------------------

/// Closed polygonal envelope of a compensated event set.
#[derive(Debug, Clone)]
pub struct Contour {
    /// Vertices of a simple closed polygon, in traversal order.
    pub polygon: Vec<(f64, f64)>,
    /// Mean of the event coordinates (not the polygon centroid).
    pub centroid: (f64, f64),
    /// Enclosed area by the shoelace formula, px².
    pub pixel_area: f64,
}

/// Per-view particle observation handed to stereo matching.
#[derive(Debug, Clone)]
pub struct ParticleObservation {
    pub view_id: ViewId,
    /// Window [t0, t0 + dt] in microseconds.
    pub window_us: (i64, i64),
    pub state: ParticleState,
    pub events_used: Vec<CompensatedEvent>,
    /// px/µs; zero for non-moving states.
    pub velocity: Vector2<f64>,
    pub contour: Contour,
    pub centroid: (f64, f64),
    pub pixel_area: f64,
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone-chain convex hull; returns hull vertices in
/// counter-clockwise order without the closing repeat.
fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn shoelace_area(polygon: &[(f64, f64)]) -> f64 {
    let n = polygon.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = polygon[i];
        let (x1, y1) = polygon[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc.abs() / 2.0
}

#[derive(Debug, Clone, Copy)]
struct Triangle {
    v: [usize; 3],
    /// Circumcenter and squared circumradius, cached for point location.
    cc: (f64, f64),
    r2: f64,
}

fn circumcircle(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Option<((f64, f64), f64)> {
    let d = 2.0 * (a.0 * (b.1 - c.1) + b.0 * (c.1 - a.1) + c.0 * (a.1 - b.1));
    if d.abs() < 1e-12 {
        return None;
    }
    let a2 = a.0 * a.0 + a.1 * a.1;
    let b2 = b.0 * b.0 + b.1 * b.1;
    let c2 = c.0 * c.0 + c.1 * c.1;
    let ux = (a2 * (b.1 - c.1) + b2 * (c.1 - a.1) + c2 * (a.1 - b.1)) / d;
    let uy = (a2 * (c.0 - b.0) + b2 * (a.0 - c.0) + c2 * (b.0 - a.0)) / d;
    let r2 = (a.0 - ux).powi(2) + (a.1 - uy).powi(2);
    Some(((ux, uy), r2))
}

/// Bowyer-Watson Delaunay triangulation. Points on a circumcircle (within a
/// small tolerance) are treated as outside, which keeps the incremental
/// insertion deterministic on integer lattices.
fn delaunay(points: &[(f64, f64)]) -> Vec<[usize; 3]> {
    let n = points.len();
    if n < 3 {
        return Vec::new();
    }
    let (mut minx, mut miny, mut maxx, mut maxy) =
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        minx = minx.min(x);
        miny = miny.min(y);
        maxx = maxx.max(x);
        maxy = maxy.max(y);
    }
    let span = (maxx - minx).max(maxy - miny).max(1.0);
    let cx = (minx + maxx) / 2.0;
    let cy = (miny + maxy) / 2.0;
    // Super-triangle comfortably containing every point.
    let mut verts: Vec<(f64, f64)> = points.to_vec();
    let s0 = n;
    verts.push((cx - 20.0 * span, cy - span));
    verts.push((cx + 20.0 * span, cy - span));
    verts.push((cx, cy + 20.0 * span));

    let make = |v: [usize; 3], verts: &[(f64, f64)]| -> Option<Triangle> {
        circumcircle(verts[v[0]], verts[v[1]], verts[v[2]]).map(|(cc, r2)| Triangle { v, cc, r2 })
    };
    let mut tris: Vec<Triangle> = vec![make([s0, s0 + 1, s0 + 2], &verts).unwrap()];

    for pi in 0..n {
        let p = verts[pi];
        // Triangles whose circumcircle strictly contains p are invalidated.
        let mut bad = Vec::new();
        for (ti, t) in tris.iter().enumerate() {
            let d2 = (p.0 - t.cc.0).powi(2) + (p.1 - t.cc.1).powi(2);
            if d2 < t.r2 * (1.0 - 1e-12) - 1e-12 {
                bad.push(ti);
            }
        }
        // Boundary of the cavity: edges used by exactly one bad triangle.
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &ti in &bad {
            let v = tris[ti].v;
            for (a, b) in [(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                let key = (a.min(b), a.max(b));
                if let Some(pos) = edges.iter().position(|&e| e == key) {
                    edges.swap_remove(pos);
                } else {
                    edges.push(key);
                }
            }
        }
        for &ti in bad.iter().rev() {
            tris.swap_remove(ti);
        }
        for (a, b) in edges {
            if let Some(t) = make([a, b, pi], &verts) {
                tris.push(t);
            }
        }
    }
    tris.iter()
        .filter(|t| t.v.iter().all(|&v| v < n))
        .map(|t| {
            let mut v = t.v;
            v.sort_unstable();
            v
        })
        .collect()
}

/// Traces the boundary edges (those belonging to exactly one triangle) into
/// a single closed loop, or None when the boundary is not one simple loop.
fn trace_boundary(triangles: &[[usize; 3]]) -> Option<Vec<usize>> {
    let mut edge_count: std::collections::BTreeMap<(usize, usize), usize> =
        std::collections::BTreeMap::new();
    for t in triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let boundary: Vec<(usize, usize)> =
        edge_count.iter().filter(|&(_, &c)| c == 1).map(|(&e, _)| e).collect();
    if boundary.len() < 3 {
        return None;
    }
    let mut adj: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for &(a, b) in &boundary {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    // A simple loop requires every boundary vertex to have exactly degree 2.
    if adj.values().any(|v| v.len() != 2) {
        return None;
    }
    let start = *adj.keys().next().unwrap();
    let mut loop_vs = vec![start];
    let mut prev = start;
    let mut cur = adj[&start][0];
    while cur != start {
        loop_vs.push(cur);
        let next = if adj[&cur][0] == prev { adj[&cur][1] } else { adj[&cur][0] };
        prev = cur;
        cur = next;
        if loop_vs.len() > boundary.len() {
            return None;
        }
    }
    // The single loop must consume every boundary edge.
    if loop_vs.len() != boundary.len() {
        return None;
    }
    Some(loop_vs)
}

/// Extracts a closed envelope around compensated event coordinates: an
/// alpha-shape (Delaunay triangles with circumradius at most `alpha_radius`)
/// when its boundary is a single loop, otherwise the convex hull. The
/// centroid is the mean of the input coordinates; the area comes from the
/// shoelace formula.
pub fn contour_extract(points: &[(f64, f64)], alpha_radius: f64) -> Result<Contour> {
    let mut unique: Vec<(f64, f64)> = points.to_vec();
    unique.sort_by(|a, b| a.partial_cmp(b).unwrap());
    unique.dedup();
    if unique.len() < 3 {
        return Err(Error::DegenerateObservation(format!(
            "{} distinct event coordinates; need >= 3",
            unique.len()
        )));
    }
    let hull = convex_hull(&unique);
    if hull.len() < 3 || shoelace_area(&hull) < 1e-9 {
        return Err(Error::DegenerateObservation("event coordinates are collinear".into()));
    }

    let tris = delaunay(&unique);
    let alpha2 = alpha_radius * alpha_radius;
    let kept: Vec<[usize; 3]> = tris
        .into_iter()
        .filter(|t| {
            circumcircle(unique[t[0]], unique[t[1]], unique[t[2]])
                .map(|(_, r2)| r2 <= alpha2)
                .unwrap_or(false)
        })
        .collect();
    let polygon = trace_boundary(&kept)
        .map(|loop_vs| loop_vs.into_iter().map(|i| unique[i]).collect::<Vec<_>>())
        .unwrap_or(hull);

    let n = points.len() as f64;
    let centroid = (
        points.iter().map(|p| p.0).sum::<f64>() / n,
        points.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let pixel_area = shoelace_area(&polygon);
    Ok(Contour { polygon, centroid, pixel_area })
}
