//! Spatially-variant-exposure mosaic decoding: demultiplex the 2x2 pattern
//! and rebuild four full-resolution, spatially registered exposure images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Assignment of the four transmittances to macro-pixel positions,
/// row-major: index 0 = top-left, 3 = bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosaicLayout(pub [usize; 4]);

impl Default for MosaicLayout {
    fn default() -> Self {
        MosaicLayout([0, 1, 2, 3])
    }
}

impl MosaicLayout {
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 4];
        for &p in &self.0 {
            if p >= 4 || seen[p] {
                return Err(Error::Config(format!("invalid mosaic layout {:?}", self.0)));
            }
            seen[p] = true;
        }
        Ok(())
    }

    /// Macro-pixel offset (dx, dy) carrying exposure `k`.
    pub fn offset_of(&self, k: usize) -> (usize, usize) {
        let pos = self.0.iter().position(|&p| p == k).expect("validated layout");
        (pos % 2, pos / 2)
    }
}

/// Single-shot quad-exposure mosaic straight off the sensor.
#[derive(Debug, Clone)]
pub struct RawSveMosaic {
    pub values: Image,
    pub transmittances: [f64; 4],
    pub bit_depth: u32,
    pub layout: MosaicLayout,
}

impl RawSveMosaic {
    pub fn new(
        values: Image,
        transmittances: [f64; 4],
        bit_depth: u32,
        layout: MosaicLayout,
    ) -> Result<Self> {
        let mosaic = Self { values, transmittances, bit_depth, layout };
        mosaic.validate()?;
        Ok(mosaic)
    }

    pub fn max_count(&self) -> f64 {
        (2u64.pow(self.bit_depth) - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.width() % 2 != 0 || self.values.height() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "mosaic dimensions {}x{} must be even",
                self.values.width(),
                self.values.height()
            )));
        }
        self.layout.validate()?;
        let max = self.max_count();
        for &v in self.values.data() {
            if !(0.0..=max).contains(&v) {
                return Err(Error::Invariant(format!(
                    "mosaic value {v} outside [0, {max}]"
                )));
            }
        }
        for (i, &tau) in self.transmittances.iter().enumerate() {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::Invariant(format!("transmittance {i} = {tau} not in (0,1]")));
            }
            for &other in &self.transmittances[..i] {
                if tau == other {
                    return Err(Error::Invariant("transmittances must be distinct".into()));
                }
            }
        }
        Ok(())
    }
}

/// Four full-resolution exposures reconstructed from one mosaic.
#[derive(Debug, Clone)]
pub struct ExposureStack {
    pub images: Vec<Image>,
    pub transmittances: Vec<f64>,
    pub per_image_mean: Vec<f64>,
    /// Per-exposure saturation masks (true where value >= 0.98 * full scale).
    pub saturated: Vec<Vec<bool>>,
}

impl ExposureStack {
    pub fn k(&self) -> usize {
        self.images.len()
    }

    pub fn from_images(images: Vec<Image>, transmittances: Vec<f64>, full_scale: f64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Input("empty exposure stack".into()));
        }
        if images.len() != transmittances.len() {
            return Err(Error::Input("transmittance count mismatch".into()));
        }
        let dims = (images[0].width(), images[0].height());
        for img in &images {
            if (img.width(), img.height()) != dims {
                return Err(Error::Dimension("stack images differ in size".into()));
            }
        }
        let per_image_mean = images.iter().map(Image::mean).collect();
        let sat_level = 0.98 * full_scale;
        let saturated = images
            .iter()
            .map(|img| img.data().iter().map(|&v| v >= sat_level).collect())
            .collect();
        Ok(Self { images, transmittances, per_image_mean, saturated })
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }
}

/// Split the mosaic into four quarter-resolution sub-images, exposure order.
pub fn demultiplex(mosaic: &RawSveMosaic) -> Result<Vec<Image>> {
    mosaic.validate()?;
    let w = mosaic.values.width() / 2;
    let h = mosaic.values.height() / 2;
    let mut subs = Vec::with_capacity(4);
    for k in 0..4 {
        let (dx, dy) = mosaic.layout.offset_of(k);
        subs.push(Image::from_fn(w, h, |x, y| {
            mosaic.values.get(2 * x + dx, 2 * y + dy)
        }));
    }
    Ok(subs)
}

/// 4-tap gradient-corrected half-sample kernel (-1, 9, 9, -1)/16.
const HALF_KERNEL: [f64; 4] = [-1.0 / 16.0, 9.0 / 16.0, 9.0 / 16.0, -1.0 / 16.0];

/// Sample a line at coarse position `i + 0.5` (i may be -1 or n-1), with
/// linear extrapolation past the ends so affine ramps stay exact.
fn half_sample(line: &[f64], i: isize) -> f64 {
    let n = line.len() as isize;
    let at = |j: isize| -> f64 {
        if j < 0 {
            // linear extrapolation from the first two samples
            let s0 = line[0];
            let s1 = line[(1).min(n - 1) as usize];
            s0 - (s1 - s0) * (-j) as f64
        } else if j >= n {
            let s0 = line[(n - 1) as usize];
            let s1 = line[(n - 2).max(0) as usize];
            s0 + (s0 - s1) * (j - n + 1) as f64
        } else {
            line[j as usize]
        }
    };
    HALF_KERNEL[0] * at(i - 1) + HALF_KERNEL[1] * at(i) + HALF_KERNEL[2] * at(i + 1)
        + HALF_KERNEL[3] * at(i + 2)
}

/// Upsample one axis by 2 with the sub-image phase `d` (0 or 1): output
/// position `2i + d` copies sample `i`, the other parity is interpolated.
fn upsample_phase(line: &[f64], out_len: usize, d: usize) -> Vec<f64> {
    (0..out_len)
        .map(|x| {
            let rel = x as isize - d as isize;
            if rel.rem_euclid(2) == 0 {
                let i = rel.div_euclid(2);
                // On-lattice points outside the coarse range only occur for
                // d = 1, x = out_len - 1 when out_len is even; extrapolate.
                if i >= 0 && (i as usize) < line.len() {
                    line[i as usize]
                } else {
                    half_sample(line, i) // falls through to extrapolation
                }
            } else {
                half_sample(line, rel.div_euclid(2))
            }
        })
        .collect()
}

/// Gradient-corrected 2x upsampling of one demultiplexed sub-image.
///
/// `phase` is the (dx, dy) macro-pixel offset where this sub-image's samples
/// live on the full-resolution grid. Output agrees with the sub-image at its
/// native sites, reproduces affine ramps exactly, and is clamped non-negative.
pub fn interpolate_subimage(
    sub: &Image,
    target_w: usize,
    target_h: usize,
    phase: (usize, usize),
) -> Result<Image> {
    if target_w != sub.width() * 2 || target_h != sub.height() * 2 {
        return Err(Error::Dimension(format!(
            "target {}x{} is not 2x sub-image {}x{}",
            target_w,
            target_h,
            sub.width(),
            sub.height()
        )));
    }
    let (dx, dy) = phase;
    // Rows.
    let mut horiz = Image::new(target_w, sub.height());
    for y in 0..sub.height() {
        let row: Vec<f64> = (0..sub.width()).map(|x| sub.get(x, y)).collect();
        for (x, v) in upsample_phase(&row, target_w, dx).into_iter().enumerate() {
            horiz.set(x, y, v);
        }
    }
    // Columns.
    let mut out = Image::new(target_w, target_h);
    for x in 0..target_w {
        let col: Vec<f64> = (0..horiz.height()).map(|y| horiz.get(x, y)).collect();
        for (y, v) in upsample_phase(&col, target_h, dy).into_iter().enumerate() {
            out.set(x, y, v.max(0.0));
        }
    }
    Ok(out)
}

/// Rebuild the full-resolution exposure stack from a raw mosaic.
///
/// When `rescale_by_tau` is set, each exposure is divided by its
/// transmittance; the default leaves exposures in sensor counts and lets the
/// fusion weights absorb the exposure differences.
pub fn reconstruct_stack(mosaic: &RawSveMosaic, rescale_by_tau: bool) -> Result<ExposureStack> {
    let subs = demultiplex(mosaic)?;
    let w = mosaic.values.width();
    let h = mosaic.values.height();
    let mut images = Vec::with_capacity(4);
    for (k, sub) in subs.iter().enumerate() {
        let phase = mosaic.layout.offset_of(k);
        let mut img = interpolate_subimage(sub, w, h, phase)?;
        if rescale_by_tau {
            img = img.map(|v| v / mosaic.transmittances[k]);
        }
        images.push(img);
    }
    let full_scale = if rescale_by_tau {
        // Saturation happens in counts; rescaling moves the clip level with tau.
        f64::INFINITY
    } else {
        mosaic.max_count()
    };
    let mut stack =
        ExposureStack::from_images(images, mosaic.transmittances.to_vec(), full_scale)?;
    if rescale_by_tau {
        let sat_level = 0.98 * mosaic.max_count();
        for (k, img) in stack.images.iter().enumerate() {
            let tau = mosaic.transmittances[k];
            stack.saturated[k] = img.data().iter().map(|&v| v * tau >= sat_level).collect();
        }
    }
    Ok(stack)
}
