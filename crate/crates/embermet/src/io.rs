//! File formats: portable float maps, 16-bit PNG mosaics, 8-bit label
//! images, measurement CSV, and the stereo calibration file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::stereo::{CameraModel, ParticleMeasurement, StereoRig};

// ---------------------------------------------------------------------------
// Portable float map (grayscale "Pf", little-endian, bottom-up rows)
// ---------------------------------------------------------------------------

/// Writes a grayscale PFM: "Pf", dimensions, scale -1.0 (little-endian),
/// then f32 rows bottom-up.
pub fn write_pfm(path: &Path, image: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "Pf\n{} {}\n-1.0\n", image.width(), image.height())?;
    for y in (0..image.height()).rev() {
        for x in 0..image.width() {
            w.write_all(&(image.get(x, y) as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a grayscale little-endian PFM back into an image.
pub fn read_pfm(path: &Path) -> Result<Image> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = String::new();
    let mut offset = 0u64;
    for _ in 0..3 {
        let mut line = String::new();
        let n = r.read_line(&mut line)?;
        offset += n as u64;
        header.push_str(&line);
    }
    let mut parts = header.split_whitespace();
    let magic = parts.next().unwrap_or("");
    if magic != "Pf" {
        return Err(Error::Parse { offset: 0, msg: format!("expected 'Pf', found '{magic}'") });
    }
    let parse = |s: Option<&str>, what: &str| -> Result<f64> {
        s.ok_or_else(|| Error::Parse { offset: 0, msg: format!("missing {what}") })?
            .parse::<f64>()
            .map_err(|e| Error::Parse { offset: 0, msg: format!("bad {what}: {e}") })
    };
    let width = parse(parts.next(), "width")? as usize;
    let height = parse(parts.next(), "height")? as usize;
    let scale = parse(parts.next(), "scale")?;
    if scale >= 0.0 {
        return Err(Error::Parse {
            offset,
            msg: "big-endian PFM not supported (scale must be negative)".into(),
        });
    }
    let mut data = vec![0u8; width * height * 4];
    r.read_exact(&mut data).map_err(|_| Error::Parse {
        offset,
        msg: format!("truncated PFM payload; expected {} bytes", width * height * 4),
    })?;
    let mut image = Image::new(width, height);
    let mut i = 0;
    for y in (0..height).rev() {
        for x in 0..width {
            let v = f32::from_le_bytes([data[i], data[i + 1], data[i + 2], data[i + 3]]);
            image.set(x, y, v as f64);
            i += 4;
        }
    }
    Ok(image)
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

/// Writes an image as 16-bit grayscale PNG; values are rounded and clamped
/// to [0, 65535].
pub fn write_png16(path: &Path, image: &Image) -> Result<()> {
    let mut buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::new(image.width() as u32, image.height() as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        *px = image::Luma([image.get(x as usize, y as usize).round().clamp(0.0, 65535.0) as u16]);
    }
    buf.save(path).map_err(|e| Error::Input(format!("png write {path:?}: {e}")))
}

/// Reads a 16-bit (or 8-bit, widened) grayscale PNG.
pub fn read_png16(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Input(format!("png read {path:?}: {e}")))?
        .into_luma16();
    let mut out = Image::new(img.width() as usize, img.height() as usize);
    for (x, y, px) in img.enumerate_pixels() {
        out.set(x as usize, y as usize, px.0[0] as f64);
    }
    Ok(out)
}

/// Writes region labels (1..=m) as an 8-bit PNG, stretched over the full
/// gray range for visibility.
pub fn write_label_png(path: &Path, labels: &[u8], width: usize, height: usize, m: usize) -> Result<()> {
    if labels.len() != width * height {
        return Err(Error::Dimension(format!(
            "{} labels for {}x{} image",
            labels.len(),
            width,
            height
        )));
    }
    let scale = 255.0 / m.max(1) as f64;
    let mut buf: image::ImageBuffer<image::Luma<u8>, Vec<u8>> =
        image::ImageBuffer::new(width as u32, height as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let l = labels[y as usize * width + x as usize] as f64;
        *px = image::Luma([(l * scale).round().clamp(0.0, 255.0) as u8]);
    }
    buf.save(path).map_err(|e| Error::Input(format!("png write {path:?}: {e}")))
}

// ---------------------------------------------------------------------------
// Measurement CSV
// ---------------------------------------------------------------------------

pub const MEASUREMENT_HEADER: &str =
    "t_us,x_mm,y_mm,z_mm,dh_mm,re_left_mm,re_right_mm,re_mm,reproj_px";

/// Writes the measurement table; an empty slice produces just the header.
pub fn write_measurements_csv<W: Write>(w: &mut W, rows: &[ParticleMeasurement]) -> Result<()> {
    writeln!(w, "{MEASUREMENT_HEADER}")?;
    for m in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            m.t_us,
            m.centroid_mm[0],
            m.centroid_mm[1],
            m.centroid_mm[2],
            m.dh_mm,
            m.re_left_mm,
            m.re_right_mm,
            m.re_mm,
            m.reprojection_error_px
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Calibration file
// ---------------------------------------------------------------------------

/// One camera in the calibration file. Rotation is row-major, translation in
/// millimetres, `mu` is the pixel pitch in mm/px.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CameraCalibration {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: [f64; 5],
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub mu: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Calibration {
    pub left: CameraCalibration,
    pub right: CameraCalibration,
}

impl CameraCalibration {
    pub fn from_model(m: &CameraModel) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[i * 3 + j] = m.rotation[(i, j)];
            }
        }
        Self {
            f: m.focal_px,
            cx: m.principal_point.0,
            cy: m.principal_point.1,
            distortion: m.distortion,
            r,
            t: [m.translation.x, m.translation.y, m.translation.z],
            mu: m.pixel_pitch_mm,
            width: m.sensor_dims.0,
            height: m.sensor_dims.1,
        }
    }

    pub fn to_model(&self) -> Result<CameraModel> {
        let rotation = Matrix3::from_row_slice(&self.r);
        let model = CameraModel {
            focal_px: self.f,
            principal_point: (self.cx, self.cy),
            distortion: self.distortion,
            rotation,
            translation: Vector3::from(self.t),
            pixel_pitch_mm: self.mu,
            sensor_dims: (self.width, self.height),
        };
        model.validate()?;
        Ok(model)
    }
}

impl Calibration {
    pub fn from_rig(rig: &StereoRig) -> Self {
        Self {
            left: CameraCalibration::from_model(&rig.left),
            right: CameraCalibration::from_model(&rig.right),
        }
    }

    pub fn to_rig(&self) -> Result<StereoRig> {
        let rig = StereoRig { left: self.left.to_model()?, right: self.right.to_model()? };
        rig.validate()?;
        Ok(rig)
    }
}

pub fn write_calibration(path: &Path, calib: &Calibration) -> Result<()> {
    let json = serde_json::to_string_pretty(calib)
        .map_err(|e| Error::Input(format!("calibration serialize: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parse { offset: e.column() as u64, msg: format!("calibration: {e}") })
}

// ---------------------------------------------------------------------------
// Minimal deterministic plot rendering (report artifacts)
// ---------------------------------------------------------------------------

/// Renders a bar chart of histogram counts into an 8-bit PNG. Purely
/// deterministic; intended for the run report, not for metrology.
pub fn write_histogram_png(path: &Path, counts: &[usize], marked: &[usize]) -> Result<()> {
    let (w, h) = (40 * counts.len().max(1) + 20, 240usize);
    let mut img = vec![255u8; w * h];
    let peak = counts.iter().copied().max().unwrap_or(1).max(1);
    for (i, &c) in counts.iter().enumerate() {
        let bar_h = (c * 200) / peak;
        let x0 = 10 + i * 40;
        let shade = if marked.contains(&i) { 0u8 } else { 128 };
        for y in h - 20 - bar_h..h - 20 {
            for x in x0..x0 + 32 {
                img[y * w + x] = shade;
            }
        }
    }
    // Baseline.
    for x in 0..w {
        img[(h - 18) * w + x] = 0;
    }
    let buf: image::ImageBuffer<image::Luma<u8>, Vec<u8>> =
        image::ImageBuffer::from_vec(w as u32, h as u32, img)
            .ok_or_else(|| Error::Dimension("histogram buffer".into()))?;
    buf.save(path).map_err(|e| Error::Input(format!("png write {path:?}: {e}")))
}

/// Renders a scatter of (t, value) samples into an 8-bit PNG with per-point
/// crosses; deterministic report artifact.
pub fn write_scatter_png(path: &Path, samples: &[(f64, f64)]) -> Result<()> {
    let (w, h) = (320usize, 240usize);
    let mut img = vec![255u8; w * h];
    for x in 0..w {
        img[(h - 10) * w + x] = 0;
    }
    for y in 0..h {
        img[y * w + 10] = 0;
    }
    if !samples.is_empty() {
        let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(t, v) in samples {
            tmin = tmin.min(t);
            tmax = tmax.max(t);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        let tspan = (tmax - tmin).max(1e-12);
        let vspan = (vmax - vmin).max(1e-12);
        for &(t, v) in samples {
            let px = 15 + ((t - tmin) / tspan * (w - 30) as f64).round() as usize;
            let py = h - 15 - ((v - vmin) / vspan * (h - 30) as f64).round() as usize;
            for (dx, dy) in [(0i64, 0i64), (-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (x, y) = (px as i64 + dx, py as i64 + dy);
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    img[y as usize * w + x as usize] = 0;
                }
            }
        }
    }
    let buf: image::ImageBuffer<image::Luma<u8>, Vec<u8>> =
        image::ImageBuffer::from_vec(w as u32, h as u32, img)
            .ok_or_else(|| Error::Dimension("scatter buffer".into()))?;
    buf.save(path).map_err(|e| Error::Input(format!("png write {path:?}: {e}")))
}

/// Convenience: observation centroid as a vector (report plumbing).
pub fn centroid_vec(c: (f64, f64)) -> Vector2<f64> {
    Vector2::new(c.0, c.1)
}
