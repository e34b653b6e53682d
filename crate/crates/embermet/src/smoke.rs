//! Smoke/visibility features over the exposure stack, the combined
//! smoke-likelihood map F(x), and its region segmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm;
use crate::image::Image;
use crate::sve::ExposureStack;

/// Weights (alpha, beta, gamma, sigma) for BI, WC, CF, V. Must sum to 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SmokeWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl Default for SmokeWeights {
    fn default() -> Self {
        // Empirical coefficients: higher weight on edge preservation (beta)
        // and saturation handling (sigma).
        Self { alpha: 0.1, beta: 0.4, gamma: 0.2, sigma: 0.3 }
    }
}

impl SmokeWeights {
    pub fn validate(&self) -> Result<()> {
        let sum = self.alpha + self.beta + self.gamma + self.sigma;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("smoke weights sum to {sum}, expected 1")));
        }
        if [self.alpha, self.beta, self.gamma, self.sigma].iter().any(|&w| w < 0.0) {
            return Err(Error::Config("smoke weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// The four per-pixel features plus their scattering-model intermediates.
#[derive(Debug, Clone)]
pub struct FeatureMaps {
    pub bi: Image,
    pub wc: Image,
    pub cf: Image,
    pub v: Image,
    pub dark_channel: Image,
    pub bright_channel: Image,
    pub mean_variance: f64,
    pub epsilon: f64,
}

/// Combined likelihood map with its segmentation.
#[derive(Debug, Clone)]
pub struct SmokeMap {
    /// Normalized smoke likelihood in [0,1].
    pub f: Image,
    pub weights: SmokeWeights,
    /// Region labels 1..=m, ordered by ascending mean likelihood.
    pub labels: Vec<u8>,
    /// Effective region count (may be < requested when modes merge).
    pub m: usize,
    /// Per-region (mean, variance) of f, indexed by label - 1.
    pub region_stats: Vec<(f64, f64)>,
}

impl SmokeMap {
    /// Visibility gate threshold: upper edge (mean + 2 std) of the densest
    /// region's likelihood. Small bright emitters dominate the normalized
    /// feature maps and land in the top region alongside dense smoke, so the
    /// threshold is a veto on extreme likelihood rather than a tight region
    /// boundary; finer discrimination belongs to the radiative-signature gate.
    pub fn default_visibility_threshold(&self) -> f64 {
        match self.region_stats.last() {
            None => 0.5,
            Some(&(mean, var)) => (mean + 2.0 * var.sqrt()).clamp(0.0, 1.0),
        }
    }

    pub fn mean_f_over(&self, pixels: impl Iterator<Item = (usize, usize)>) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (x, y) in pixels {
            if x < self.f.width() && y < self.f.height() {
                acc += self.f.get(x, y);
                n += 1;
            }
        }
        if n == 0 {
            1.0
        } else {
            acc / n as f64
        }
    }
}

/// Brightness deviation intensity:
/// BI(x) = (1/K) * sqrt(sum_k (max(I_k(x), mu_k/2) - mu_k)^2).
pub fn brightness_deviation(stack: &ExposureStack) -> Result<Image> {
    if stack.k() == 0 {
        return Err(Error::Input("empty exposure stack".into()));
    }
    let k = stack.k() as f64;
    let mut out = Image::new(stack.width(), stack.height());
    for (idx, img) in stack.images.iter().enumerate() {
        let mu = stack.per_image_mean[idx];
        let t = mu / 2.0;
        for (o, &v) in out.data_mut().iter_mut().zip(img.data()) {
            let d = v.max(t) - mu;
            *o += d * d;
        }
    }
    Ok(out.map(|s| s.sqrt() / k))
}

/// Average Weber contrast: WC(x) = (1/K) * sum_k |grad I_k(x)| / (I_k(x) + 1).
pub fn weber_contrast(stack: &ExposureStack) -> Result<Image> {
    if stack.k() == 0 {
        return Err(Error::Input("empty exposure stack".into()));
    }
    let k = stack.k() as f64;
    let mut out = Image::new(stack.width(), stack.height());
    for img in &stack.images {
        let grad = img.gradient_magnitude();
        for ((o, &g), &v) in out.data_mut().iter_mut().zip(grad.data()).zip(img.data()) {
            *o += g / (v + 1.0);
        }
    }
    Ok(out.map(|s| s / k))
}

/// Dark and bright channels: per-pixel min/max across exposures, then a local
/// window min/max of size `w` (w = 1 keeps them pixelwise).
pub fn dark_bright_channels(stack: &ExposureStack, w: usize) -> Result<(Image, Image)> {
    if stack.k() < 2 {
        return Err(Error::Input("dark/bright channels need K >= 2 exposures".into()));
    }
    let mut dark = stack.images[0].clone();
    let mut bright = stack.images[0].clone();
    for img in &stack.images[1..] {
        dark = dark.zip_map(img, f64::min)?;
        bright = bright.zip_map(img, f64::max)?;
    }
    Ok((dark.window_extremum(w, false), bright.window_extremum(w, true)))
}

/// Generalized contrast feature: CF(x) = 1 - dark / max(bright, 1).
pub fn contrast_feature(dark: &Image, bright: &Image) -> Result<Image> {
    for (&d, &b) in dark.data().iter().zip(bright.data()) {
        if d > b + 1e-12 {
            return Err(Error::Invariant(format!("dark channel {d} exceeds bright {b}")));
        }
    }
    dark.zip_map(bright, |d, b| (1.0 - d / b.max(1.0)).clamp(0.0, 1.0))
}

/// Across-exposure variance per pixel (population variance).
pub fn pixel_variance(stack: &ExposureStack) -> Result<Image> {
    if stack.k() < 2 {
        return Err(Error::Input("variance needs K >= 2 exposures".into()));
    }
    let k = stack.k() as f64;
    let mut mean = Image::new(stack.width(), stack.height());
    for img in &stack.images {
        mean = mean.zip_map(img, |a, b| a + b)?;
    }
    mean = mean.map(|v| v / k);
    let mut var = Image::new(stack.width(), stack.height());
    for img in &stack.images {
        let d = img.zip_map(&mean, |a, b| a - b)?;
        var = var.zip_map(&d, |a, b| a + b * b)?;
    }
    Ok(var.map(|v| v / k))
}

/// Geometric mean of per-pixel variances, with +eps inside the log so a
/// zero-variance stack yields exactly zero.
pub fn geometric_mean_variance(var: &Image, eps: f64) -> f64 {
    let n = var.len() as f64;
    let log_sum: f64 = var.data().iter().map(|&v| (v + eps).ln()).sum();
    (log_sum / n).exp() - eps
}

/// Normalized response variance: V(x) = (Var(x) - chi) / (chi + eps).
pub fn response_variance(stack: &ExposureStack, eps: f64) -> Result<(Image, f64)> {
    let var = pixel_variance(stack)?;
    let chi = geometric_mean_variance(&var, eps);
    let v = var.map(|x| (x - chi) / (chi + eps));
    Ok((v, chi))
}

/// All four features plus intermediates.
pub fn compute_features(stack: &ExposureStack, window: usize, eps: f64) -> Result<FeatureMaps> {
    let bi = brightness_deviation(stack)?;
    let wc = weber_contrast(stack)?;
    let (dark, bright) = dark_bright_channels(stack, window)?;
    let cf = contrast_feature(&dark, &bright)?;
    let (v, chi) = response_variance(stack, eps)?;
    Ok(FeatureMaps {
        bi,
        wc,
        cf,
        v,
        dark_channel: dark,
        bright_channel: bright,
        mean_variance: chi,
        epsilon: eps,
    })
}

/// F(x) = alpha*BI + beta*WC + gamma*CF + sigma*V after per-frame min-max
/// normalization of each feature.
pub fn combine_likelihood(features: &FeatureMaps, weights: &SmokeWeights) -> Result<Image> {
    weights.validate()?;
    for img in [&features.bi, &features.wc, &features.cf, &features.v] {
        if img.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
    }
    let bi = features.bi.normalize_min_max();
    let wc = features.wc.normalize_min_max();
    let cf = features.cf.normalize_min_max();
    let v = features.v.normalize_min_max();
    let mut f = Image::new(bi.width(), bi.height());
    for i in 0..f.len() {
        f.data_mut()[i] = weights.alpha * bi.data()[i]
            + weights.beta * wc.data()[i]
            + weights.gamma * cf.data()[i]
            + weights.sigma * v.data()[i];
    }
    Ok(f)
}

/// Segment the likelihood map into up to `m` regions: multi-Otsu thresholds
/// initialize a 1-D GMM, EM refines, labels come from the maximum posterior
/// and are reordered by ascending component mean. Degenerate histograms
/// collapse to fewer effective regions.
pub fn segment_regions(f: &Image, m: usize) -> Result<(Vec<u8>, usize, Vec<(f64, f64)>)> {
    if m < 2 {
        return Err(Error::Config("segmentation needs M >= 2".into()));
    }
    if f.data().iter().any(|&v| !(0.0..=1.0 + 1e-9).contains(&v)) {
        return Err(Error::Input("likelihood map must lie in [0,1]".into()));
    }
    let samples = f.data();
    let (lo, hi) = f.min_max();
    if hi - lo < 1e-9 {
        // Constant map: single effective region.
        let mean = f.mean();
        return Ok((vec![1u8; f.len()], 1, vec![(mean, 0.0)]));
    }
    let thresholds = gmm::multi_otsu_thresholds(samples, m);
    let init = gmm::init_from_thresholds(samples, &thresholds);
    let fit = gmm::em_fit(samples, init, 100, 1e-6);
    let comps = gmm::merge_degenerate(fit, 1e-3);
    if comps.len() < m {
        log::warn!(
            "segment_regions: {} effective regions (requested {m})",
            comps.len()
        );
    }
    let labels: Vec<u8> = samples
        .iter()
        .map(|&x| (gmm::map_label(x, &comps) + 1) as u8)
        .collect();
    // Per-region stats of f.
    let m_eff = comps.len();
    let mut count = vec![0usize; m_eff];
    let mut sum = vec![0f64; m_eff];
    let mut sq = vec![0f64; m_eff];
    for (&l, &x) in labels.iter().zip(samples) {
        let i = (l - 1) as usize;
        count[i] += 1;
        sum[i] += x;
        sq[i] += x * x;
    }
    let stats: Vec<(f64, f64)> = (0..m_eff)
        .map(|i| {
            if count[i] == 0 {
                (comps[i].mean, comps[i].variance)
            } else {
                let mu = sum[i] / count[i] as f64;
                (mu, (sq[i] / count[i] as f64 - mu * mu).max(0.0))
            }
        })
        .collect();
    Ok((labels, m_eff, stats))
}

/// Full smoke map from an exposure stack.
pub fn build_smoke_map(
    stack: &ExposureStack,
    weights: &SmokeWeights,
    m: usize,
    window: usize,
    eps: f64,
) -> Result<SmokeMap> {
    let features = compute_features(stack, window, eps)?;
    let f = combine_likelihood(&features, weights)?;
    let (labels, m_eff, region_stats) = segment_regions(&f, m)?;
    Ok(SmokeMap { f, weights: *weights, labels, m: m_eff, region_stats })
}
