//! Distances between empirical distributions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_PROJECTIONS: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n_samples: usize,
    pub n_projections: Option<usize>,
    pub seed: Option<u64>,
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `W_p^p` between two sorted samples, integrating `|Qa(u) - Qb(u)|^p` over
/// the merged breakpoints of the two empirical quantile functions.
fn wp_pow_sorted(a: &[f64], b: &[f64], p: i32) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == m {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs().powi(p)).sum::<f64>() / n as f64;
    }
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        // Compare (i+1)/n with (j+1)/m exactly in integers.
        let (next_a, next_b) = ((i + 1) * m, (j + 1) * n);
        let next = next_a.min(next_b) as f64 / (n * m) as f64;
        total += (next - u) * (a[i] - b[j]).abs().powi(p);
        u = next;
        if next_a <= next_b {
            i += 1;
        }
        if next_b <= next_a {
            j += 1;
        }
    }
    total
}

fn check_nonempty(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("metric needs non-empty sample sets".into()));
    }
    Ok(())
}

/// Exact 1-Wasserstein distance between two 1D empirical distributions.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(wp_pow_sorted(&sorted(a), &sorted(b), 1))
}

/// Exact 2-Wasserstein distance between two 1D empirical distributions.
pub fn wasserstein2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_nonempty(a, b)?;
    Ok(wp_pow_sorted(&sorted(a), &sorted(b), 2).sqrt())
}

/// Random unit directions in `dim` dimensions.
pub fn random_directions<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Sliced 2-Wasserstein distance: the square root of the mean squared 1D W2
/// over the given projection directions. `a` and `b` are row-major `n x dim`.
pub fn sliced_w2_with(a: &[f64], b: &[f64], dim: usize, directions: &[Vec<f64>]) -> Result<f64> {
    check_nonempty(a, b)?;
    if directions.is_empty() {
        return Err(Error::Argument("sliced W2 needs >= 1 projection".into()));
    }
    if dim == 0 || !a.len().is_multiple_of(dim) || !b.len().is_multiple_of(dim) {
        return Err(Error::Argument(format!("sample length not a multiple of dim {dim}")));
    }
    let project = |xs: &[f64], d: &[f64]| -> Vec<f64> {
        sorted(
            &xs.chunks(dim)
                .map(|p| p.iter().zip(d).map(|(x, w)| x * w).sum())
                .collect::<Vec<f64>>(),
        )
    };
    let mean = directions
        .iter()
        .map(|d| wp_pow_sorted(&project(a, d), &project(b, d), 2))
        .sum::<f64>()
        / directions.len() as f64;
    Ok(mean.sqrt())
}

pub fn sliced_w2<R: Rng + ?Sized>(a: &[f64], b: &[f64], dim: usize, n_proj: usize, rng: &mut R) -> Result<f64> {
    if n_proj == 0 {
        return Err(Error::Argument("sliced W2 needs >= 1 projection".into()));
    }
    let dirs = random_directions(dim, n_proj, rng);
    sliced_w2_with(a, b, dim, &dirs)
}

/// Density-normalized histogram over `range` split into `bins` equal bins.
/// Samples outside the range are ignored; the last bin includes its right edge.
pub fn histogram(samples: &[f64], bins: usize, range: (f64, f64)) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if bins == 0 || !(hi > lo) {
        return Err(Error::Argument(format!(
            "histogram needs bins >= 1 and lo < hi, got {bins} on {range:?}"
        )));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut inside = 0;
    for &x in samples {
        if x < lo || x > hi || x.is_nan() {
            continue;
        }
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
        inside += 1;
    }
    if inside == 0 {
        return Ok(vec![0.0; bins]);
    }
    Ok(counts.into_iter().map(|c| c as f64 / (inside as f64 * width)).collect())
}
