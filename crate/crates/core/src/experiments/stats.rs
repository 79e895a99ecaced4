use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest sample size for which the signed-rank null distribution is
/// enumerated exactly.
pub const EXACT_MAX_PAIRS: usize = 25;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub p_value: f64,
    /// Variant mean above baseline mean and `p < 0.05`.
    pub significant: bool,
    pub baseline_mean: f64,
    pub variant_mean: f64,
    /// Pairs left after dropping zero differences.
    pub pairs_used: usize,
}

/// Paired two-sided Wilcoxon signed-rank test of `variant` against `baseline`.
///
/// Zero differences are dropped. Tied magnitudes share their average rank.
/// Both decisions use a tolerance of `1e-9` times the largest magnitude, so
/// the outcome is unchanged when all differences are rescaled.
pub fn significance(baseline: &[f64], variant: &[f64]) -> Result<Significance> {
    if baseline.len() != variant.len() {
        return Err(Error::LengthMismatch {
            expected: baseline.len(),
            actual: variant.len(),
        });
    }
    if baseline.is_empty() {
        return Err(Error::Config("significance needs at least one pair".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let baseline_mean = mean(baseline);
    let variant_mean = mean(variant);
    let diffs: Vec<f64> = variant.iter().zip(baseline).map(|(v, b)| v - b).collect();
    let scale = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let tol = 1e-9 * scale;
    let mut nonzero: Vec<f64> = diffs.into_iter().filter(|d| d.abs() > tol).collect();
    let p_value = if nonzero.is_empty() {
        1.0
    } else {
        nonzero.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let (doubled, tie_sizes) = doubled_ranks(&nonzero, tol);
        let w_plus: u64 = nonzero
            .iter()
            .zip(&doubled)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, r)| r)
            .sum();
        if nonzero.len() <= EXACT_MAX_PAIRS {
            exact_p(&doubled, w_plus)
        } else {
            normal_p(nonzero.len(), &tie_sizes, w_plus as f64 / 2.0)
        }
    };
    Ok(Significance {
        p_value,
        significant: variant_mean > baseline_mean && p_value < SIGNIFICANCE_LEVEL,
        baseline_mean,
        variant_mean,
        pairs_used: nonzero.len(),
    })
}

/// Twice the average ranks of `|d|` (input sorted by magnitude), as integers,
/// plus the sizes of the tie groups.
fn doubled_ranks(sorted: &[f64], tol: f64) -> (Vec<u64>, Vec<usize>) {
    let mut ranks = vec![0; sorted.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let start = sorted[i].abs();
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].abs() - start <= tol {
            j += 1;
        }
        for r in &mut ranks[i..=j] {
            *r = (i + j + 2) as u64;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Two-sided p-value from the exact null distribution of the positive rank
/// sum, every sign pattern being equally likely.
fn exact_p(doubled: &[u64], w_plus: u64) -> f64 {
    let max: u64 = doubled.iter().sum();
    let mut counts = vec![0.0f64; max as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let total = 2f64.powi(doubled.len() as i32);
    let w = w_plus as usize;
    let lower: f64 = counts[..=w].iter().sum::<f64>() / total;
    let upper: f64 = counts[w..].iter().sum::<f64>() / total;
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_p(n: usize, tie_sizes: &[usize], w_plus: f64) -> f64 {
    let n = n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / 48.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term;
    let dev = ((w_plus - mean).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Locally weighted linear regression evaluated at every input point.
///
/// Each fit uses the `max(2, floor(frac * n))` nearest neighbours with tricube
/// weights, followed by one robustness pass with bisquare weights on the
/// residuals. A neighbourhood without spread in `x` falls back to the
/// weighted mean. `x` must be sorted ascending.
pub fn lowess(x: &[f64], y: &[f64], frac: f64) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Config(format!("lowess fraction {frac} outside (0, 1]")));
    }
    if x.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("lowess x values must be ascending".into()));
    }
    let n = x.len();
    if n < 2 {
        return Ok(y.to_vec());
    }
    let k = ((frac * n as f64 + 1e-10).floor() as usize).clamp(2, n);
    let robust = vec![1.0; n];
    let fitted = lowess_pass(x, y, k, &robust);
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| (a - b).abs()).collect();
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let yscale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if median <= 1e-12 * yscale {
        return Ok(fitted);
    }
    let robust: Vec<f64> = residuals
        .iter()
        .map(|r| {
            let u = r / (6.0 * median);
            if u < 1.0 {
                (1.0 - u * u).powi(2)
            } else {
                0.0
            }
        })
        .collect();
    Ok(lowess_pass(x, y, k, &robust))
}

fn lowess_pass(x: &[f64], y: &[f64], k: usize, robust: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let mut lo = 0;
    for i in 0..n {
        // slide the k-point window [lo, lo + k) toward x[i]
        while lo + k < n && x[i] - x[lo] > x[lo + k] - x[i] {
            lo += 1;
        }
        let hi = lo + k;
        let radius = (x[i] - x[lo]).max(x[hi - 1] - x[i]);
        let mut sw = 0.0;
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut weights = Vec::with_capacity(k);
        for j in lo..hi {
            let w = if radius > 0.0 {
                let u = (x[j] - x[i]).abs() / radius;
                if u < 1.0 {
                    (1.0 - u * u * u).powi(3)
                } else {
                    0.0
                }
            } else {
                1.0
            } * robust[j];
            weights.push(w);
            sw += w;
            sx += w * x[j];
            sy += w * y[j];
        }
        if sw <= 0.0 {
            out.push(y[i]);
            continue;
        }
        let mx = sx / sw;
        let my = sy / sw;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (j, w) in (lo..hi).zip(&weights) {
            sxx += w * (x[j] - mx).powi(2);
            sxy += w * (x[j] - mx) * (y[j] - my);
        }
        let span = x[hi - 1] - x[lo];
        if sxx <= 1e-12 * span * span * sw || span == 0.0 {
            out.push(my);
        } else {
            out.push(my + sxy / sxx * (x[i] - mx));
        }
    }
    out
}
