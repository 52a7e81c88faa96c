//! Small-sample statistics for comparing runs: moments, Welch's t and a
//! percentile bootstrap of the difference of means.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::par;
use crate::rng::{stream, stream_rng};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n - 1) variance; zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Welch {
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
}

/// Welch's unequal-variance t statistic for `mean(a) - mean(b)`. Identical
/// constant samples give `t = 0`; separated constant samples give an
/// infinite `t`.
pub fn welch(a: &[f64], b: &[f64]) -> Welch {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se = (va + vb).sqrt();
    let t = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    let df = if va + vb > 0.0 {
        (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0))
    } else {
        na + nb - 2.0
    };
    Welch { t, df }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub resamples: usize,
    pub low: f64,
    pub high: f64,
    /// Fraction of replicates where the resampled difference is positive.
    pub frac_positive: f64,
}

const CHUNK: usize = 1024;

/// Percentile bootstrap of `mean(a) - mean(b)`, resampling each side
/// independently with replacement. Replicates are drawn in fixed-size chunks
/// with one seeded stream per chunk, so the result does not depend on how
/// the chunks are scheduled.
pub fn bootstrap_diff(a: &[f64], b: &[f64], resamples: usize, level: f64, seed: u64) -> Bootstrap {
    assert!(!a.is_empty() && !b.is_empty() && resamples > 0);
    let chunks = resamples.div_ceil(CHUNK);
    let parts = par::map_range(chunks, |c| {
        let mut rng = stream_rng(seed, stream::BOOTSTRAP, c as u64);
        let n = CHUNK.min(resamples - c * CHUNK);
        (0..n)
            .map(|_| {
                let ma = (0..a.len()).map(|_| a[rng.random_range(0..a.len())]).sum::<f64>() / a.len() as f64;
                let mb = (0..b.len()).map(|_| b[rng.random_range(0..b.len())]).sum::<f64>() / b.len() as f64;
                ma - mb
            })
            .collect::<Vec<f64>>()
    });
    let mut diffs: Vec<f64> = parts.into_iter().flatten().collect();
    let frac_positive = diffs.iter().filter(|&&d| d > 0.0).count() as f64 / resamples as f64;
    diffs.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Bootstrap {
        resamples,
        low: quantile_sorted(&diffs, alpha),
        high: quantile_sorted(&diffs, 1.0 - alpha),
        frac_positive,
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
