#![allow(dead_code)]

use hrf::distributions::DistributionSpec;
use hrf::field::DirectionField;
use hrf::nn::MlpConfig;
use hrf::Result;

/// `f = a * sum_d x^(d) + b * sum_d t^(d)`, applied per coordinate.
pub struct LinearField {
    pub depth: usize,
    pub dim: usize,
    pub a: f64,
    pub b: f64,
    pub sources: Vec<DistributionSpec>,
}

impl LinearField {
    pub fn new(depth: usize, dim: usize, a: f64, b: f64) -> Self {
        LinearField {
            depth,
            dim,
            a,
            b,
            sources: vec![DistributionSpec::gaussian(dim); depth],
        }
    }
}

impl DirectionField for LinearField {
    fn depth(&self) -> usize {
        self.depth
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn sources(&self) -> &[DistributionSpec] {
        &self.sources
    }

    fn eval(&self, spaces: &[&[f64]], times: &[&[f64]], n: usize, out: &mut [f64]) -> Result<()> {
        for r in 0..n {
            let tsum: f64 = times.iter().map(|t| t[r]).sum();
            for k in 0..self.dim {
                let xsum: f64 = spaces.iter().map(|s| s[r * self.dim + k]).sum();
                out[r * self.dim + k] = self.a * xsum + self.b * tsum;
            }
        }
        Ok(())
    }

    fn eval_with_vjp(
        &self,
        spaces: &[&[f64]],
        times: &[f64],
        cotangents: &[&[f64]],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let tsum: f64 = times.iter().sum();
        let value = (0..self.dim)
            .map(|k| self.a * spaces.iter().map(|s| s[k]).sum::<f64>() + self.b * tsum)
            .collect();
        let vjps = cotangents
            .iter()
            .map(|c| c.iter().map(|x| self.a * x).collect())
            .collect();
        Ok((value, vjps))
    }
}

/// Small network used by tests that train.
pub fn tiny_net(depth: usize, dim: usize) -> MlpConfig {
    MlpConfig {
        embed_dim: 8,
        space_width: 8,
        hidden_dims: vec![16, 16],
        ..MlpConfig::hrf_default(depth, dim)
    }
}

/// Exact 1-Wasserstein distance between an empirical sample and a density,
/// `int |F_n(x) - F(x)| dx`, with `F` from trapezoid integration on `grid`
/// points over `[lo, hi]`.
pub fn w1_against_density<P: Fn(f64) -> f64>(samples: &[f64], pdf: P, lo: f64, hi: f64, grid: usize) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (hi - lo) / grid as f64;
    let n = s.len() as f64;
    let (mut cdf, mut prev_pdf, mut idx, mut total) = (0.0, pdf(lo), 0usize, 0.0);
    for k in 1..=grid {
        let x = lo + k as f64 * h;
        let p = pdf(x);
        cdf += 0.5 * (prev_pdf + p) * h;
        prev_pdf = p;
        while idx < s.len() && s[idx] <= x {
            idx += 1;
        }
        total += (idx as f64 / n - cdf).abs() * h;
    }
    total
}
