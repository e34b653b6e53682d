//! Scalar image container and the small set of filters the pipeline shares.

use crate::error::{Error, Result};

/// Row-major grayscale image with `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with symmetric (edge-repeating) mirror extension.
    #[inline]
    pub fn get_mirror(&self, x: isize, y: isize) -> f64 {
        let xm = mirror_index(x, self.width);
        let ym = mirror_index(y, self.height);
        self.data[ym * self.width + xm]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        if !self.same_dims(other) {
            return Err(Error::Dimension("zip_map on mismatched images".into()));
        }
        Ok(Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Per-frame min-max normalization to [0,1]; a flat image maps to all zeros.
    pub fn normalize_min_max(&self) -> Image {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        if span <= 0.0 || !span.is_finite() {
            return Image::constant(self.width, self.height, 0.0);
        }
        self.map(|v| (v - lo) / span)
    }

    /// Percentile via sorted copy; `p` in [0,1], linear interpolation.
    pub fn percentile(&self, p: f64) -> f64 {
        assert!(!self.data.is_empty());
        let mut sorted = self.data.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        percentile_sorted(&sorted, p)
    }

    /// Gradient magnitude via central differences with mirror boundaries.
    pub fn gradient_magnitude(&self) -> Image {
        Image::from_fn(self.width, self.height, |x, y| {
            let (x, y) = (x as isize, y as isize);
            let gx = (self.get_mirror(x + 1, y) - self.get_mirror(x - 1, y)) / 2.0;
            let gy = (self.get_mirror(x, y + 1) - self.get_mirror(x, y - 1)) / 2.0;
            (gx * gx + gy * gy).sqrt()
        })
    }

    /// Box mean over a (2r+1)^2 window, mirror boundaries.
    pub fn box_mean(&self, radius: usize) -> Image {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as isize;
        // Horizontal then vertical pass.
        let horiz = Image::from_fn(self.width, self.height, |x, y| {
            let mut acc = 0.0;
            for dx in -r..=r {
                acc += self.get_mirror(x as isize + dx, y as isize);
            }
            acc / (2 * r + 1) as f64
        });
        Image::from_fn(self.width, self.height, |x, y| {
            let mut acc = 0.0;
            for dy in -r..=r {
                acc += horiz.get_mirror(x as isize, y as isize + dy);
            }
            acc / (2 * r + 1) as f64
        })
    }

    /// Local minimum / maximum over a w x w window (w odd), mirror boundaries.
    pub fn window_extremum(&self, w: usize, maximum: bool) -> Image {
        if w <= 1 {
            return self.clone();
        }
        let r = (w / 2) as isize;
        Image::from_fn(self.width, self.height, |x, y| {
            let mut best = if maximum { f64::NEG_INFINITY } else { f64::INFINITY };
            for dy in -r..=r {
                for dx in -r..=r {
                    let v = self.get_mirror(x as isize + dx, y as isize + dy);
                    best = if maximum { best.max(v) } else { best.min(v) };
                }
            }
            best
        })
    }
}

pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[n - 1]
    }
}

/// Symmetric mirror index: ..., 1, 0 | 0, 1, ..., n-1 | n-1, n-2, ...
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as isize;
    let period = 2 * n;
    let mut m = i % period;
    if m < 0 {
        m += period;
    }
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

// ---------------------------------------------------------------------------
// Gaussian / Laplacian pyramids (Burt-Adelson 5-tap kernel).
// ---------------------------------------------------------------------------

const PYR_KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn blur5(img: &Image) -> Image {
    let horiz = Image::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = 0.0;
        for (k, &w) in PYR_KERNEL.iter().enumerate() {
            acc += w * img.get_mirror(x as isize + k as isize - 2, y as isize);
        }
        acc
    });
    Image::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = 0.0;
        for (k, &w) in PYR_KERNEL.iter().enumerate() {
            acc += w * horiz.get_mirror(x as isize, y as isize + k as isize - 2);
        }
        acc
    })
}

/// Blur and decimate by two (even sample sites kept).
pub fn pyr_down(img: &Image) -> Image {
    let blurred = blur5(img);
    let w = img.width().div_ceil(2);
    let h = img.height().div_ceil(2);
    Image::from_fn(w, h, |x, y| blurred.get(x * 2, y * 2))
}

/// One axis of the zero-insert + doubled-kernel upsample, expressed directly
/// over mirrored coarse samples so constants survive at the boundaries.
fn upsample_line(line: &[f64], out_len: usize) -> Vec<f64> {
    (0..out_len)
        .map(|x| {
            let mut acc = 0.0;
            for (j, &w) in PYR_KERNEL.iter().enumerate() {
                let m = x as isize + j as isize - 2;
                if m.rem_euclid(2) == 0 {
                    let ci = mirror_index(m.div_euclid(2), line.len());
                    acc += 2.0 * w * line[ci];
                }
            }
            acc
        })
        .collect()
}

/// Upsample to the requested dimensions (inverse decimation step of `pyr_down`).
pub fn pyr_up(img: &Image, target_w: usize, target_h: usize) -> Image {
    assert!(target_w.div_ceil(2) == img.width() && target_h.div_ceil(2) == img.height());
    // Rows first.
    let mut horiz = Image::new(target_w, img.height());
    for y in 0..img.height() {
        let row: Vec<f64> = (0..img.width()).map(|x| img.get(x, y)).collect();
        for (x, v) in upsample_line(&row, target_w).into_iter().enumerate() {
            horiz.set(x, y, v);
        }
    }
    // Then columns.
    let mut out = Image::new(target_w, target_h);
    for x in 0..target_w {
        let col: Vec<f64> = (0..horiz.height()).map(|y| horiz.get(x, y)).collect();
        for (y, v) in upsample_line(&col, target_h).into_iter().enumerate() {
            out.set(x, y, v);
        }
    }
    out
}

/// Gaussian pyramid, level 0 is the input.
pub fn gaussian_pyramid(img: &Image, levels: usize) -> Vec<Image> {
    assert!(levels >= 1);
    let mut pyr = vec![img.clone()];
    for _ in 1..levels {
        let next = pyr_down(pyr.last().unwrap());
        pyr.push(next);
    }
    pyr
}

/// Laplacian pyramid: `levels - 1` band-pass layers plus the residual base.
pub fn laplacian_pyramid(img: &Image, levels: usize) -> Vec<Image> {
    let gauss = gaussian_pyramid(img, levels);
    let mut lap = Vec::with_capacity(levels);
    for l in 0..levels - 1 {
        let up = pyr_up(&gauss[l + 1], gauss[l].width(), gauss[l].height());
        lap.push(gauss[l].zip_map(&up, |a, b| a - b).unwrap());
    }
    lap.push(gauss[levels - 1].clone());
    lap
}

/// Exact inverse of `laplacian_pyramid`.
pub fn collapse_pyramid(lap: &[Image]) -> Image {
    let mut acc = lap.last().unwrap().clone();
    for l in (0..lap.len() - 1).rev() {
        let up = pyr_up(&acc, lap[l].width(), lap[l].height());
        acc = lap[l].zip_map(&up, |a, b| a + b).unwrap();
    }
    acc
}

/// Maximum pyramid depth so that every level keeps at least 2 pixels per axis.
pub fn max_pyramid_levels(width: usize, height: usize) -> usize {
    let m = width.min(height);
    if m == 0 {
        return 0;
    }
    (m as f64).log2().floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_index_reflects() {
        assert_eq!(mirror_index(0, 4), 0);
        assert_eq!(mirror_index(-1, 4), 0);
        assert_eq!(mirror_index(-2, 4), 1);
        assert_eq!(mirror_index(3, 4), 3);
        assert_eq!(mirror_index(4, 4), 3);
        assert_eq!(mirror_index(5, 4), 2);
    }

    #[test]
    fn pyramid_round_trip_is_tight() {
        let img = Image::from_fn(37, 29, |x, y| {
            (x as f64 * 0.3).sin() + (y as f64 * 0.2).cos() * 2.0 + 3.0
        });
        let lap = laplacian_pyramid(&img, 4);
        let back = collapse_pyramid(&lap);
        for (a, b) in img.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pyr_down_up_preserves_constant() {
        let img = Image::constant(16, 16, 5.0);
        let down = pyr_down(&img);
        for &v in down.data() {
            assert!((v - 5.0).abs() < 1e-12);
        }
        let up = pyr_up(&down, 16, 16);
        for &v in up.data() {
            assert!((v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_flat_image_is_zero() {
        let img = Image::constant(4, 4, 7.0);
        assert!(img.normalize_min_max().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_ramp() {
        let img = Image::from_fn(9, 9, |x, _| 3.0 * x as f64);
        let g = img.gradient_magnitude();
        // Interior pixels see the exact slope.
        assert!((g.get(4, 4) - 3.0).abs() < 1e-12);
    }
}
