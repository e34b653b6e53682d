//! 1-D Gaussian mixture fitting with deterministic multi-Otsu initialization.

/// One mixture component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

const VAR_FLOOR: f64 = 1e-10;

/// Multi-level Otsu thresholds over a 256-bin histogram of `samples`
/// (assumed in [0,1]). Returns `m - 1` thresholds in ascending order.
///
/// Exhaustive search maximizing between-class variance; m <= 4 keeps the
/// search space tractable (C(255,3) combinations worst case).
pub fn multi_otsu_thresholds(samples: &[f64], m: usize) -> Vec<f64> {
    assert!(m >= 2 && m <= 4, "multi-otsu supports 2..=4 classes");
    const BINS: usize = 256;
    let mut hist = [0f64; BINS];
    for &v in samples {
        let b = ((v.clamp(0.0, 1.0)) * (BINS - 1) as f64).round() as usize;
        hist[b] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    if total == 0.0 {
        return (1..m).map(|i| i as f64 / m as f64).collect();
    }
    // Prefix sums of mass and first moment for O(1) class statistics.
    let mut p = [0f64; BINS + 1];
    let mut s = [0f64; BINS + 1];
    for i in 0..BINS {
        p[i + 1] = p[i] + hist[i] / total;
        s[i + 1] = s[i] + (i as f64) * hist[i] / total;
    }
    let class_term = |lo: usize, hi: usize| -> f64 {
        // between-class contribution of bins [lo, hi)
        let w = p[hi] - p[lo];
        if w <= 0.0 {
            return 0.0;
        }
        let mu = (s[hi] - s[lo]) / w;
        w * mu * mu
    };
    let mut best = f64::NEG_INFINITY;
    let mut best_t = vec![0usize; m - 1];
    match m {
        2 => {
            for t1 in 1..BINS {
                let v = class_term(0, t1) + class_term(t1, BINS);
                if v > best {
                    best = v;
                    best_t = vec![t1];
                }
            }
        }
        3 => {
            for t1 in 1..BINS - 1 {
                let a = class_term(0, t1);
                for t2 in t1 + 1..BINS {
                    let v = a + class_term(t1, t2) + class_term(t2, BINS);
                    if v > best {
                        best = v;
                        best_t = vec![t1, t2];
                    }
                }
            }
        }
        4 => {
            for t1 in 1..BINS - 2 {
                let a = class_term(0, t1);
                for t2 in t1 + 1..BINS - 1 {
                    let b = a + class_term(t1, t2);
                    for t3 in t2 + 1..BINS {
                        let v = b + class_term(t2, t3) + class_term(t3, BINS);
                        if v > best {
                            best = v;
                            best_t = vec![t1, t2, t3];
                        }
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    best_t.iter().map(|&t| t as f64 / (BINS - 1) as f64).collect()
}

/// Initialize `m` components from the threshold partition of the samples.
pub fn init_from_thresholds(samples: &[f64], thresholds: &[f64]) -> Vec<Component> {
    let m = thresholds.len() + 1;
    let mut count = vec![0usize; m];
    let mut sum = vec![0f64; m];
    let mut sq = vec![0f64; m];
    for &v in samples {
        let mut c = 0;
        while c < thresholds.len() && v > thresholds[c] {
            c += 1;
        }
        count[c] += 1;
        sum[c] += v;
        sq[c] += v * v;
    }
    let n = samples.len().max(1) as f64;
    (0..m)
        .map(|c| {
            if count[c] == 0 {
                // Empty class: park it on the nearest threshold midpoint.
                let mean = if c == 0 {
                    thresholds.first().copied().unwrap_or(0.5) / 2.0
                } else if c == m - 1 {
                    (thresholds.last().copied().unwrap_or(0.5) + 1.0) / 2.0
                } else {
                    (thresholds[c - 1] + thresholds[c]) / 2.0
                };
                Component { weight: 1e-6, mean, variance: 1e-4 }
            } else {
                let mean = sum[c] / count[c] as f64;
                let var = (sq[c] / count[c] as f64 - mean * mean).max(VAR_FLOOR);
                Component { weight: count[c] as f64 / n, mean, variance: var }
            }
        })
        .collect()
}

fn log_gauss(x: f64, c: &Component) -> f64 {
    let d = x - c.mean;
    -0.5 * ((2.0 * std::f64::consts::PI * c.variance).ln() + d * d / c.variance)
}

/// Full EM refinement. Deterministic: no random restarts.
pub fn em_fit(
    samples: &[f64],
    mut components: Vec<Component>,
    max_iters: usize,
    tol: f64,
) -> Vec<Component> {
    let n = samples.len();
    if n == 0 {
        return components;
    }
    let m = components.len();
    let mut resp = vec![0f64; n * m];
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..max_iters {
        // E step.
        let mut ll = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            let mut logs: Vec<f64> = components
                .iter()
                .map(|c| c.weight.max(1e-300).ln() + log_gauss(x, c))
                .collect();
            let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for l in logs.iter_mut() {
                *l = (*l - mx).exp();
                z += *l;
            }
            for (c, l) in logs.iter().enumerate() {
                resp[i * m + c] = l / z;
            }
            ll += mx + z.ln();
        }
        // M step.
        for c in 0..m {
            let mut w = 0.0;
            let mut mu = 0.0;
            for (i, &x) in samples.iter().enumerate() {
                let r = resp[i * m + c];
                w += r;
                mu += r * x;
            }
            if w < 1e-12 {
                components[c].weight = 1e-12;
                continue;
            }
            mu /= w;
            let mut var = 0.0;
            for (i, &x) in samples.iter().enumerate() {
                let d = x - mu;
                var += resp[i * m + c] * d * d;
            }
            components[c] =
                Component { weight: w / n as f64, mean: mu, variance: (var / w).max(VAR_FLOOR) };
        }
        if (ll - prev_ll).abs() < tol * (1.0 + ll.abs()) {
            break;
        }
        prev_ll = ll;
    }
    components
}

/// Posterior-argmax label (0-based component index) for one sample.
pub fn map_label(x: f64, components: &[Component]) -> usize {
    let mut best = 0;
    let mut best_l = f64::NEG_INFINITY;
    for (c, comp) in components.iter().enumerate() {
        let l = comp.weight.max(1e-300).ln() + log_gauss(x, comp);
        if l > best_l {
            best_l = l;
            best = c;
        }
    }
    best
}

/// Merge components whose means are indistinguishable (or whose weight has
/// collapsed); returns the surviving components sorted by ascending mean.
pub fn merge_degenerate(components: Vec<Component>, mean_tol: f64) -> Vec<Component> {
    let mut comps: Vec<Component> =
        components.into_iter().filter(|c| c.weight > 1e-9).collect();
    comps.sort_by(|a, b| a.mean.partial_cmp(&b.mean).unwrap());
    let mut merged: Vec<Component> = Vec::new();
    for c in comps {
        if let Some(last) = merged.last_mut() {
            if (c.mean - last.mean).abs() < mean_tol {
                let w = last.weight + c.weight;
                last.mean = (last.mean * last.weight + c.mean * c.weight) / w;
                last.variance = last.variance.max(c.variance);
                last.weight = w;
                continue;
            }
        }
        merged.push(c);
    }
    if merged.is_empty() {
        merged.push(Component { weight: 1.0, mean: 0.0, variance: VAR_FLOOR });
    }
    merged
}
