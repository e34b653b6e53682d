//! Retinex decomposition and region-guided dual-weighted pyramid fusion of
//! the exposure stack into a single HDR image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{
    collapse_pyramid, gaussian_pyramid, laplacian_pyramid, max_pyramid_levels, Image,
};
use crate::smoke::SmokeMap;
use crate::sve::ExposureStack;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionParams {
    /// Normalizer for the Gaussian well-exposedness term (max W_L2 = 1/psi).
    pub psi: f64,
    /// Decay of the well-exposedness term, in normalized intensity.
    pub delta: f64,
    /// Pyramid levels.
    pub levels: usize,
    /// Stabilizer used in weight normalization.
    pub epsilon: f64,
    /// Guided-filter radius = max(dims) / this divisor (at least 1).
    pub guided_radius_divisor: usize,
    /// Guided-filter regularization, relative to the squared intensity range.
    pub guided_regularization: f64,
    /// Feather radius (pixels) for blending region-wise weight statistics.
    pub feather_radius: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            psi: 1.0,
            delta: 0.2,
            levels: 5,
            epsilon: 1e-6,
            guided_radius_divisor: 32,
            guided_regularization: 0.1,
            feather_radius: 3,
        }
    }
}

/// Illumination / reflection split of each exposure: I = L * R.
#[derive(Debug, Clone)]
pub struct RetinexLayers {
    pub illumination: Vec<Image>,
    pub reflection: Vec<Image>,
    pub eps_r: f64,
}

/// Per-exposure fusion weights, normalized across exposures at every pixel.
#[derive(Debug, Clone)]
pub struct WeightMaps {
    pub w_l: Vec<Image>,
    pub w_r: Vec<Image>,
}

#[derive(Debug, Clone)]
pub struct HdrImage {
    pub values: Image,
    pub provenance: String,
}

const EPS_R: f64 = 1e-12;

/// Edge-preserving self-guided filter (O'(r) box filters).
fn guided_filter(img: &Image, radius: usize, reg: f64) -> Image {
    let mean = img.box_mean(radius);
    let sq = img.map(|v| v * v).box_mean(radius);
    let (_, hi) = img.min_max();
    let eps = reg * hi.max(1e-12).powi(2);
    let mut a = Image::new(img.width(), img.height());
    let mut b = Image::new(img.width(), img.height());
    for i in 0..img.len() {
        let m = mean.data()[i];
        let var = (sq.data()[i] - m * m).max(0.0);
        let ai = var / (var + eps);
        a.data_mut()[i] = ai;
        b.data_mut()[i] = m * (1.0 - ai);
    }
    let mean_a = a.box_mean(radius);
    let mean_b = b.box_mean(radius);
    Image::from_fn(img.width(), img.height(), |x, y| {
        mean_a.get(x, y) * img.get(x, y) + mean_b.get(x, y)
    })
}

/// Split every exposure into a strictly positive illumination layer and a
/// reflection layer with I = L * R (to within the tiny eps_r regularizer).
pub fn retinex_decompose(stack: &ExposureStack, params: &FusionParams) -> Result<RetinexLayers> {
    let radius = (stack.width().max(stack.height()) / params.guided_radius_divisor).max(1);
    let mut illumination = Vec::with_capacity(stack.k());
    let mut reflection = Vec::with_capacity(stack.k());
    for img in &stack.images {
        if img.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Input("negative intensity in exposure stack".into()));
        }
        let (_, hi) = img.min_max();
        let floor = (1e-6 * hi).max(1e-12);
        let l = guided_filter(img, radius, params.guided_regularization).map(|v| v.max(floor));
        let r = img.zip_map(&l, |i, l| i / (l + EPS_R))?;
        illumination.push(l);
        reflection.push(r);
    }
    Ok(RetinexLayers { illumination, reflection, eps_r: EPS_R })
}

/// Histogram of `values` restricted to `mask`, over [lo, hi] with `bins` bins.
fn masked_histogram(values: &Image, mask: &[bool], lo: f64, hi: f64, bins: usize) -> (Vec<f64>, usize) {
    let mut hist = vec![0f64; bins];
    let mut count = 0usize;
    let span = (hi - lo).max(1e-12);
    for (i, &v) in values.data().iter().enumerate() {
        if mask[i] {
            let b = (((v - lo) / span) * (bins - 1) as f64).round().clamp(0.0, (bins - 1) as f64);
            hist[b as usize] += 1.0;
            count += 1;
        }
    }
    if count > 0 {
        for h in hist.iter_mut() {
            *h /= count as f64;
        }
    }
    (hist, count)
}

/// Region-wise dual illumination weights (inverse cumulative-histogram
/// gradient times Gaussian well-exposedness), feathered across region
/// boundaries and normalized across exposures per pixel.
pub fn illumination_weights(
    l_images: &[Image],
    smoke: &SmokeMap,
    params: &FusionParams,
) -> Result<Vec<Image>> {
    if params.delta <= 0.0 || params.psi <= 0.0 {
        return Err(Error::Config("psi and delta must be positive".into()));
    }
    let k = l_images.len();
    let (w, h) = (l_images[0].width(), l_images[0].height());
    if k == 1 {
        return Ok(vec![Image::constant(w, h, 1.0)]);
    }
    // Global intensity scale for normalized delta.
    let scale = l_images
        .iter()
        .map(|img| img.min_max().1)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1e-12);
    const BINS: usize = 256;
    let m_eff = smoke.m;
    // Per-region, per-exposure raw weight maps evaluated over the whole frame.
    let mut region_weight: Vec<Vec<Image>> = Vec::with_capacity(m_eff);
    for region in 1..=m_eff {
        let mask: Vec<bool> = smoke.labels.iter().map(|&l| l as usize == region).collect();
        let mut per_k = Vec::with_capacity(k);
        // Gradients of the cumulative histogram (= bin densities) per exposure.
        let mut grads: Vec<(Vec<f64>, f64, f64)> = Vec::with_capacity(k);
        let mut region_means = Vec::with_capacity(k);
        for img in l_images {
            let (lo, hi) = img.min_max();
            let (hist, count) = masked_histogram(img, &mask, lo, hi, BINS);
            let mean = if count == 0 {
                img.mean()
            } else {
                img.data()
                    .iter()
                    .zip(&mask)
                    .filter(|(_, &m)| m)
                    .map(|(&v, _)| v)
                    .sum::<f64>()
                    / count as f64
            };
            grads.push((hist, lo, hi));
            region_means.push(mean);
        }
        for (ki, img) in l_images.iter().enumerate() {
            let (hist, lo, hi) = &grads[ki];
            let span = (hi - lo).max(1e-12);
            let u = region_means[ki] / scale;
            let w1_den_eps = params.epsilon;
            let map = Image::from_fn(w, h, |x, y| {
                let v = img.get(x, y);
                let bin = (((v - lo) / span) * (BINS - 1) as f64)
                    .round()
                    .clamp(0.0, (BINS - 1) as f64) as usize;
                // Inverse histogram-gradient term; dense bins (flat, likely
                // saturated content) receive small weight.
                let mut inv_sum = 0.0;
                for (kj, other) in l_images.iter().enumerate() {
                    let (oh, olo, ohi) = &grads[kj];
                    let ospan = (ohi - olo).max(1e-12);
                    let ov = other.get(x, y);
                    let ob = (((ov - olo) / ospan) * (BINS - 1) as f64)
                        .round()
                        .clamp(0.0, (BINS - 1) as f64) as usize;
                    inv_sum += 1.0 / oh[ob].max(1e-6);
                }
                let w1 = (1.0 / hist[bin].max(1e-6)) / (inv_sum + w1_den_eps);
                let d = v / scale - u;
                let w2 = (1.0 / params.psi) * (-d * d / (2.0 * params.delta * params.delta)).exp();
                w1 * w2
            });
            per_k.push(map);
        }
        region_weight.push(per_k);
    }
    // Feathered region masks.
    let feather = params.feather_radius;
    let soft_masks: Vec<Image> = (1..=m_eff)
        .map(|region| {
            let ind = Image::from_fn(w, h, |x, y| {
                if smoke.labels[y * w + x] as usize == region {
                    1.0
                } else {
                    0.0
                }
            });
            ind.box_mean(feather)
        })
        .collect();
    // Assemble frame-wide weights and normalize across exposures.
    let mut weights: Vec<Image> = (0..k).map(|_| Image::new(w, h)).collect();
    for y in 0..h {
        for x in 0..w {
            let mut mask_sum = 0.0;
            for sm in &soft_masks {
                mask_sum += sm.get(x, y);
            }
            let mut vals = vec![0.0; k];
            for (ri, sm) in soft_masks.iter().enumerate() {
                let s = sm.get(x, y) / mask_sum.max(1e-12);
                for ki in 0..k {
                    vals[ki] += s * region_weight[ri][ki].get(x, y);
                }
            }
            let total: f64 = vals.iter().sum();
            for ki in 0..k {
                let v = if total > 1e-300 { vals[ki] / total } else { 1.0 / k as f64 };
                weights[ki].set(x, y, v);
            }
        }
    }
    Ok(weights)
}

/// Reflection-layer weights: local Weber contrast of each reflection layer,
/// normalized across exposures. The paper-side goal is particle detail
/// enhancement in the high-frequency layer.
pub fn reflection_weights(r_images: &[Image]) -> Result<Vec<Image>> {
    let k = r_images.len();
    let (w, h) = (r_images[0].width(), r_images[0].height());
    if k == 1 {
        return Ok(vec![Image::constant(w, h, 1.0)]);
    }
    let raw: Vec<Image> = r_images
        .iter()
        .map(|r| {
            let grad = r.gradient_magnitude();
            grad.zip_map(r, |g, v| g / (v.abs() + 1.0) + 1e-12).unwrap()
        })
        .collect();
    let mut weights: Vec<Image> = (0..k).map(|_| Image::new(w, h)).collect();
    for i in 0..w * h {
        let total: f64 = raw.iter().map(|m| m.data()[i]).sum();
        for ki in 0..k {
            weights[ki].data_mut()[i] = raw[ki].data()[i] / total;
        }
    }
    Ok(weights)
}

/// Blend Laplacian pyramids of L and R with Gaussian pyramids of their
/// weights, collapse both, recombine multiplicatively, clamp non-negative.
pub fn pyramid_fuse(
    layers: &RetinexLayers,
    weights: &WeightMaps,
    levels: usize,
) -> Result<Image> {
    let k = layers.illumination.len();
    let (w, h) = (layers.illumination[0].width(), layers.illumination[0].height());
    let max_levels = max_pyramid_levels(w, h);
    if levels < 1 || levels > max_levels {
        return Err(Error::Config(format!(
            "pyramid levels {levels} outside [1, {max_levels}] for {w}x{h}"
        )));
    }
    let mut fused_l: Option<Vec<Image>> = None;
    let mut fused_r: Option<Vec<Image>> = None;
    for ki in 0..k {
        let lap_l = laplacian_pyramid(&layers.illumination[ki], levels);
        let lap_r = laplacian_pyramid(&layers.reflection[ki], levels);
        let g_wl = gaussian_pyramid(&weights.w_l[ki], levels);
        let g_wr = gaussian_pyramid(&weights.w_r[ki], levels);
        let weighted_l: Vec<Image> = lap_l
            .iter()
            .zip(&g_wl)
            .map(|(l, g)| l.zip_map(g, |a, b| a * b).unwrap())
            .collect();
        let weighted_r: Vec<Image> = lap_r
            .iter()
            .zip(&g_wr)
            .map(|(l, g)| l.zip_map(g, |a, b| a * b).unwrap())
            .collect();
        let add = |acc: Option<Vec<Image>>, inc: Vec<Image>| -> Option<Vec<Image>> {
            match acc {
                None => Some(inc),
                Some(a) => Some(
                    a.iter()
                        .zip(&inc)
                        .map(|(x, y)| x.zip_map(y, |p, q| p + q).unwrap())
                        .collect(),
                ),
            }
        };
        fused_l = add(fused_l, weighted_l);
        fused_r = add(fused_r, weighted_r);
    }
    let l = collapse_pyramid(&fused_l.unwrap());
    let r = collapse_pyramid(&fused_r.unwrap());
    Ok(l.zip_map(&r, |a, b| (a * b).max(0.0))?)
}

/// Full fusion entry point: Retinex split, dual weights, pyramid blend.
pub fn fuse_stack(
    stack: &ExposureStack,
    smoke: &SmokeMap,
    params: &FusionParams,
    provenance: String,
) -> Result<HdrImage> {
    let layers = retinex_decompose(stack, params)?;
    let w_l = illumination_weights(&layers.illumination, smoke, params)?;
    let w_r = reflection_weights(&layers.reflection)?;
    let weights = WeightMaps { w_l, w_r };
    // Per-pixel normalization invariant.
    for maps in [&weights.w_l, &weights.w_r] {
        for i in 0..stack.width() * stack.height() {
            let s: f64 = maps.iter().map(|m| m.data()[i]).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Invariant(format!("weights sum to {s} at pixel {i}")));
            }
        }
    }
    let levels = params.levels.min(max_pyramid_levels(stack.width(), stack.height())).max(1);
    let values = pyramid_fuse(&layers, &weights, levels)?;
    Ok(HdrImage { values, provenance })
}

/// 8-bit tone-mapped preview (gamma 1/2.2 after 1st-99th percentile
/// normalization). Preview only; never used in metrology.
pub fn tone_map_preview(hdr: &Image) -> Vec<u8> {
    let lo = hdr.percentile(0.01);
    let hi = hdr.percentile(0.99);
    let span = (hi - lo).max(1e-12);
    hdr.data()
        .iter()
        .map(|&v| {
            let n = ((v - lo) / span).clamp(0.0, 1.0);
            (n.powf(1.0 / 2.2) * 255.0).round() as u8
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoke::SmokeWeights;

    fn stack_of(images: Vec<Image>) -> ExposureStack {
        let taus: Vec<f64> = (0..images.len()).map(|i| 1.0 / (i + 1) as f64).collect();
        ExposureStack::from_images(images, taus, f64::INFINITY).unwrap()
    }

    fn uniform_smoke(w: usize, h: usize) -> SmokeMap {
        SmokeMap {
            f: Image::constant(w, h, 0.0),
            weights: SmokeWeights::default(),
            labels: vec![1; w * h],
            m: 1,
            region_stats: vec![(0.0, 0.0)],
        }
    }

    #[test]
    fn retinex_constant_image() {
        let stack = stack_of(vec![Image::constant(16, 16, 8.0)]);
        let layers = retinex_decompose(&stack, &FusionParams::default()).unwrap();
        for &v in layers.illumination[0].data() {
            assert!((v - 8.0).abs() < 1e-9);
        }
        for &v in layers.reflection[0].data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn retinex_reconstruction_holds() {
        let img = Image::from_fn(32, 32, |x, y| {
            5.0 + 0.1 * x as f64 + 2.0 * ((x as f64 * 1.3).sin() * (y as f64 * 1.7).cos())
                .abs()
        });
        let stack = stack_of(vec![img.clone()]);
        let layers = retinex_decompose(&stack, &FusionParams::default()).unwrap();
        for i in 0..img.len() {
            let recomposed = layers.illumination[0].data()[i] * layers.reflection[0].data()[i];
            let rel = (recomposed - img.data()[i]).abs() / img.data()[i].max(1e-12);
            assert!(rel < 1e-4, "relative reconstruction error {rel}");
        }
    }

    #[test]
    fn retinex_texture_goes_to_reflection() {
        // Slow gradient plus fine texture; the illumination layer should keep
        // almost none of the texture's high-pass energy.
        let img = Image::from_fn(64, 64, |x, y| {
            20.0 + 0.2 * x as f64
                + 3.0 * ((x as f64 * 2.1).sin() * (y as f64 * 1.9).sin())
        });
        let stack = stack_of(vec![img.clone()]);
        let layers = retinex_decompose(&stack, &FusionParams::default()).unwrap();
        let hp_energy = |im: &Image| {
            let lp = im.box_mean(4);
            im.zip_map(&lp, |a, b| (a - b) * (a - b)).unwrap().data().iter().sum::<f64>()
        };
        let ratio = hp_energy(&layers.illumination[0]) / hp_energy(&img);
        assert!(ratio < 0.1, "illumination kept {ratio} of texture energy");
    }

    #[test]
    fn illumination_weights_favor_unsaturated_exposure() {
        // Exposure 1 is saturated-flat, exposure 2 carries structure.
        let flat = Image::constant(32, 32, 100.0);
        let varied = Image::from_fn(32, 32, |x, y| 20.0 + ((x * 5 + y * 3) % 60) as f64);
        let smoke = uniform_smoke(32, 32);
        let w = illumination_weights(
            &[flat, varied],
            &smoke,
            &FusionParams::default(),
        )
        .unwrap();
        let mean_w2 = w[1].mean();
        assert!(mean_w2 > 0.5, "varied exposure weight {mean_w2}");
    }

    #[test]
    fn illumination_weight_peaks_at_region_mean() {
        let params = FusionParams::default();
        // W_L2 alone peaks at u_k; probe through a two-exposure setup where
        // both exposures share the histogram term.
        let a = Image::from_fn(16, 16, |x, _| x as f64);
        let smoke = uniform_smoke(16, 16);
        let w = illumination_weights(&[a.clone(), a], &smoke, &params).unwrap();
        // Identical exposures: weights must be uniform 1/2.
        for maps in &w {
            for &v in maps.data() {
                assert!((v - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_exposure_weights_are_one() {
        let a = Image::from_fn(8, 8, |x, y| (x + y) as f64);
        let smoke = uniform_smoke(8, 8);
        let w = illumination_weights(&[a], &smoke, &FusionParams::default()).unwrap();
        assert!(w[0].data().iter().all(|&v| v == 1.0));
        let r = reflection_weights(&[Image::constant(8, 8, 1.0)]).unwrap();
        assert!(r[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn reflection_weights_uniform_on_identical_layers() {
        let r = Image::from_fn(16, 16, |x, y| 1.0 + 0.1 * ((x + y) as f64).sin());
        let w = reflection_weights(&[r.clone(), r.clone(), r]).unwrap();
        for maps in &w {
            for &v in maps.data() {
                assert!((v - 1.0 / 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reflection_weights_prefer_sharp_exposure() {
        let sharp = Image::from_fn(16, 16, |x, _| if x == 8 { 3.0 } else { 1.0 });
        let blurred = sharp.box_mean(3);
        let w = reflection_weights(&[sharp, blurred]).unwrap();
        // Probe the edge flank; the peak itself has zero central difference.
        assert!(w[0].get(7, 8) > 0.5);
    }

    #[test]
    fn fusion_identity_on_single_exposure() {
        let img = Image::from_fn(32, 32, |x, y| {
            10.0 + 5.0 * ((x as f64 * 0.4).sin() + (y as f64 * 0.3).cos()).abs()
        });
        let stack = stack_of(vec![img.clone()]);
        let smoke = uniform_smoke(32, 32);
        let hdr = fuse_stack(&stack, &smoke, &FusionParams::default(), "test".into()).unwrap();
        for i in 0..img.len() {
            let rel = (hdr.values.data()[i] - img.data()[i]).abs() / img.data()[i].max(1e-12);
            assert!(rel < 1e-3, "identity fusion relative error {rel}");
        }
    }

    #[test]
    fn fusion_idempotent_on_identical_stack() {
        let img = Image::from_fn(32, 32, |x, y| 4.0 + ((x * 3 + y * 7) % 23) as f64);
        let stack = stack_of(vec![img.clone(), img.clone(), img.clone()]);
        let smoke = uniform_smoke(32, 32);
        let hdr = fuse_stack(&stack, &smoke, &FusionParams::default(), "test".into()).unwrap();
        for i in 0..img.len() {
            let rel = (hdr.values.data()[i] - img.data()[i]).abs() / img.data()[i].max(1e-12);
            assert!(rel < 1e-3, "idempotence relative error {rel}");
        }
    }

    #[test]
    fn delta_weights_select_single_exposure() {
        // Manually build delta weights on exposure 2.
        let a = Image::from_fn(16, 16, |x, y| 2.0 * (1.0 + ((x + y) % 5) as f64));
        let b = a.map(|v| v * 3.0);
        let stack = stack_of(vec![a, b.clone()]);
        let layers = retinex_decompose(&stack, &FusionParams::default()).unwrap();
        let zero = Image::constant(16, 16, 0.0);
        let one = Image::constant(16, 16, 1.0);
        let weights = WeightMaps {
            w_l: vec![zero.clone(), one.clone()],
            w_r: vec![zero, one],
        };
        let fused = pyramid_fuse(&layers, &weights, 3).unwrap();
        for i in 0..b.len() {
            let rel = (fused.data()[i] - b.data()[i]).abs() / b.data()[i].max(1e-12);
            assert!(rel < 1e-3, "delta-weight fusion error {rel}");
        }
    }

    #[test]
    fn pyramid_level_bound_is_enforced() {
        let stack = stack_of(vec![Image::constant(8, 8, 1.0)]);
        let smoke = uniform_smoke(8, 8);
        let layers = retinex_decompose(&stack, &FusionParams::default()).unwrap();
        let weights = WeightMaps {
            w_l: vec![Image::constant(8, 8, 1.0)],
            w_r: vec![Image::constant(8, 8, 1.0)],
        };
        assert!(matches!(
            pyramid_fuse(&layers, &weights, 7),
            Err(Error::Config(_))
        ));
        let _ = smoke;
    }
}
