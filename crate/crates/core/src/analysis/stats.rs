//! Two-sample Kolmogorov–Smirnov test, Benjamini–Hochberg adjustment and
//! seeded percentile bootstraps.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
    pub n_x: usize,
    pub n_y: usize,
}

/// Samples at or below which the exact permutation distribution is used.
pub const KS_EXACT_MAX: usize = 10;
const KS_SERIES_TERMS: usize = 100;

/// Largest ECDF gap as the integer `|i·n_y − j·n_x|` (D times n_x·n_y),
/// evaluated after each distinct value so ties move both ECDFs together.
fn ks_numerator(xs: &[f64], ys: &[f64]) -> u64 {
    let mut x = xs.to_vec();
    let mut y = ys.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (nx, ny) = (x.len() as i64, y.len() as i64);
    let (mut i, mut j, mut best) = (0usize, 0usize, 0u64);
    while i < x.len() || j < y.len() {
        let v = match (x.get(i), y.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        best = best.max((i as i64 * ny - j as i64 * nx).unsigned_abs());
    }
    best
}

/// P(D ≥ observed) under the null by counting monotone lattice paths that
/// keep every gap strictly below the observed one.
fn ks_exact_p(nx: usize, ny: usize, numerator: u64) -> f64 {
    if numerator == 0 {
        return 1.0;
    }
    let inside = |i: usize, j: usize| ((i * ny) as i64 - (j * nx) as i64).unsigned_abs() < numerator;
    // Paths weighted so that the total over all paths is 1: each step from
    // (i, j) goes right with probability (nx-i)/(nx+ny-i-j).
    let mut prob = vec![vec![0.0f64; ny + 1]; nx + 1];
    prob[0][0] = 1.0;
    for i in 0..=nx {
        for j in 0..=ny {
            if (i, j) == (0, 0) {
                continue;
            }
            if !inside(i, j) {
                continue;
            }
            let mut p = 0.0;
            if i > 0 {
                let (pi, pj) = (i - 1, j);
                p += prob[pi][pj] * (nx - pi) as f64 / (nx + ny - pi - pj) as f64;
            }
            if j > 0 {
                let (pi, pj) = (i, j - 1);
                p += prob[pi][pj] * (ny - pj) as f64 / (nx + ny - pi - pj) as f64;
            }
            prob[i][j] = p;
        }
    }
    (1.0 - prob[nx][ny]).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Kolmogorov limiting tail Q(λ) = P(K > λ).
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Theta-function form, which converges quickly for small λ.
        let s: f64 = (1..=KS_SERIES_TERMS)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (-(m * m) * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let s: f64 = (1..=KS_SERIES_TERMS)
        .map(|k| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<KsResult, AnalysisError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(AnalysisError::EmptySample);
    }
    let (nx, ny) = (xs.len(), ys.len());
    let numerator = ks_numerator(xs, ys);
    let d = numerator as f64 / (nx as f64 * ny as f64);
    let p_value = if nx.min(ny) <= KS_EXACT_MAX {
        ks_exact_p(nx, ny, numerator)
    } else {
        let en = (nx as f64 * ny as f64 / (nx + ny) as f64).sqrt();
        kolmogorov_tail((en + 0.12 + 0.11 / en) * d).max(f64::MIN_POSITIVE)
    };
    Ok(KsResult { d, p_value, n_x: nx, n_y: ny })
}

/// Benjamini–Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(p_values: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if let Some(&bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(AnalysisError::PValueOutOfRange(bad));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(p_values[i] * m as f64 / (rank + 1) as f64);
        // Rounding in p·m/m must not push the result below p.
        adjusted[i] = running.min(1.0).max(p_values[i]);
    }
    Ok(adjusted)
}

/// Point estimate with a percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
}

pub const DEFAULT_RESAMPLES: usize = 2000;

/// Linear-interpolated quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn interval(estimate: f64, mut stats: Vec<f64>) -> Interval {
    stats.retain(|s| s.is_finite());
    if stats.is_empty() {
        return Interval { estimate, low: estimate, high: estimate };
    }
    stats.sort_by(f64::total_cmp);
    // The interval is widened to the estimate if resampling missed it.
    Interval { estimate, low: quantile(&stats, 0.025).min(estimate), high: quantile(&stats, 0.975).max(estimate) }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Plain bootstrap of the mean.
pub fn bootstrap_mean(values: &[f64], resamples: usize, seed: u64) -> Option<Interval> {
    let estimate = mean(values)?;
    let mut rng = rng::stream(seed, Stream::Bootstrap);
    let n = values.len();
    let stats = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    Some(interval(estimate, stats))
}

fn cluster_resample<T>(
    clusters: &[Vec<T>],
    stat: impl Fn(&[&T]) -> Option<f64>,
    resamples: usize,
    seed: u64,
) -> Option<(f64, Vec<f64>)> {
    let clusters: Vec<&Vec<T>> = clusters.iter().filter(|c| !c.is_empty()).collect();
    let all: Vec<&T> = clusters.iter().flat_map(|c| c.iter()).collect();
    let estimate = stat(&all)?;
    let mut rng = rng::stream(seed, Stream::Bootstrap);
    let k = clusters.len();
    let mut sample: Vec<&T> = Vec::with_capacity(all.len());
    let stats = (0..resamples)
        .filter_map(|_| {
            sample.clear();
            for _ in 0..k {
                let c = clusters[rng.gen_range(0..k)];
                if c.len() == 1 {
                    sample.push(&c[0]);
                } else {
                    sample.extend((0..c.len()).map(|_| &c[rng.gen_range(0..c.len())]));
                }
            }
            stat(&sample)
        })
        .collect();
    Some((estimate, stats))
}

/// Two-stage cluster bootstrap: resample clusters, then items within each
/// drawn cluster. Singleton clusters take no second-stage draw, so with one
/// item per cluster this is the plain bootstrap.
pub fn cluster_bootstrap<T>(
    clusters: &[Vec<T>],
    stat: impl Fn(&[&T]) -> Option<f64>,
    resamples: usize,
    seed: u64,
) -> Option<Interval> {
    cluster_resample(clusters, stat, resamples, seed).map(|(e, stats)| interval(e, stats))
}

/// Cluster bootstrap interval plus the one-sided p-value for "the
/// statistic is positive" (share of resamples at or below zero, +1
/// corrected).
pub fn cluster_bootstrap_p_positive<T>(
    clusters: &[Vec<T>],
    stat: impl Fn(&[&T]) -> Option<f64>,
    resamples: usize,
    seed: u64,
) -> Option<(Interval, f64)> {
    let (estimate, stats) = cluster_resample(clusters, stat, resamples, seed)?;
    let p = (stats.iter().filter(|&&s| s <= 0.0).count() + 1) as f64 / (stats.len() + 1) as f64;
    Some((interval(estimate, stats), p))
}

/// One-sided bootstrap p-value for "the mean of `diffs` is positive":
/// the share of resampled means at or below zero, with the +1 correction.
pub fn bootstrap_p_positive(diffs: &[f64], resamples: usize, seed: u64) -> Option<f64> {
    mean(diffs)?;
    let mut rng = rng::stream(seed, Stream::Bootstrap);
    let n = diffs.len();
    let at_or_below = (0..resamples)
        .filter(|_| (0..n).map(|_| diffs[rng.gen_range(0..n)]).sum::<f64>() <= 0.0)
        .count();
    Some((at_or_below + 1) as f64 / (resamples + 1) as f64)
}
