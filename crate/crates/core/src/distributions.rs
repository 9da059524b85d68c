//! Source and target distributions, plus closed-form velocity laws for a
//! standard Gaussian source and a diagonal Gaussian-mixture target.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DirectionField;

/// Marginal densities below this are treated as zero.
pub const DENSITY_FLOOR: f64 = 1e-300;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistributionSpec {
    StandardGaussian {
        dim: usize,
    },
    /// Diagonal-covariance mixture; `means[k]` and `stds[k]` have one entry per dimension.
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        stds: Vec<Vec<f64>>,
    },
    /// Two interleaved half circles (outer: unit circle upper half; inner:
    /// lower half shifted by (1, 0.5)) with isotropic Gaussian noise.
    Moons {
        #[serde(default = "default_moons_noise")]
        noise_std: f64,
    },
    /// `count` isotropic components evenly spaced on a circle, equal weights.
    GaussianRing {
        count: usize,
        radius: f64,
        component_std: f64,
    },
}

fn default_moons_noise() -> f64 {
    0.1
}

/// A diagonal Gaussian mixture in flattened form.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

impl DistributionSpec {
    /// Standard Gaussian in `dim` dimensions.
    pub fn gaussian(dim: usize) -> Self {
        DistributionSpec::StandardGaussian { dim }
    }

    /// 1D mixture from scalar parameters.
    pub fn mixture_1d(weights: &[f64], means: &[f64], stds: &[f64]) -> Self {
        DistributionSpec::GaussianMixture {
            weights: weights.to_vec(),
            means: means.iter().map(|&m| vec![m]).collect(),
            stds: stds.iter().map(|&s| vec![s]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DistributionSpec::StandardGaussian { dim } => *dim,
            DistributionSpec::GaussianMixture { means, .. } => means.first().map_or(0, Vec::len),
            DistributionSpec::Moons { .. } | DistributionSpec::GaussianRing { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self {
            DistributionSpec::StandardGaussian { dim } => {
                if !(1..=2).contains(dim) {
                    return bad(format!("dim must be 1 or 2, got {dim}"));
                }
            }
            DistributionSpec::GaussianMixture { weights, means, stds } => {
                let k = weights.len();
                if k == 0 || means.len() != k || stds.len() != k {
                    return bad("mixture needs matching, non-empty weights/means/stds".into());
                }
                let dim = means[0].len();
                if !(1..=2).contains(&dim) {
                    return bad(format!("mixture dim must be 1 or 2, got {dim}"));
                }
                if means.iter().chain(stds.iter()).any(|v| v.len() != dim) {
                    return bad("every mixture mean/std must have the same dimension".into());
                }
                if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                    return bad("mixture weights must be finite and >= 0".into());
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("mixture weights sum to {total}, expected 1"));
                }
                if stds.iter().flatten().any(|&s| !(s > 0.0) || !s.is_finite()) {
                    return bad("mixture stds must be > 0".into());
                }
                if means.iter().flatten().any(|m| !m.is_finite()) {
                    return bad("mixture means must be finite".into());
                }
            }
            DistributionSpec::Moons { noise_std } => {
                if !(*noise_std >= 0.0) {
                    return bad("moons noise_std must be >= 0".into());
                }
            }
            DistributionSpec::GaussianRing {
                count,
                radius,
                component_std,
            } => {
                if *count == 0 || !radius.is_finite() || !(*component_std > 0.0) {
                    return bad("ring needs count >= 1, finite radius and std > 0".into());
                }
            }
        }
        Ok(())
    }

    /// Mixture form of every variant that has a closed-form density.
    pub fn as_mixture(&self) -> Option<Mixture> {
        match self {
            DistributionSpec::StandardGaussian { dim } => Some(Mixture {
                dim: *dim,
                weights: vec![1.0],
                means: vec![vec![0.0; *dim]],
                stds: vec![vec![1.0; *dim]],
            }),
            DistributionSpec::GaussianMixture { weights, means, stds } => Some(Mixture {
                dim: self.dim(),
                weights: weights.clone(),
                means: means.clone(),
                stds: stds.clone(),
            }),
            DistributionSpec::GaussianRing {
                count,
                radius,
                component_std,
            } => {
                let means = (0..*count)
                    .map(|k| {
                        let a = 2.0 * PI * k as f64 / *count as f64;
                        vec![radius * a.cos(), radius * a.sin()]
                    })
                    .collect();
                Some(Mixture {
                    dim: 2,
                    weights: vec![1.0 / *count as f64; *count],
                    means,
                    stds: vec![vec![*component_std; 2]; *count],
                })
            }
            DistributionSpec::Moons { .. } => None,
        }
    }

    /// `n` i.i.d. samples, row-major `n x dim`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(n * dim);
        match self {
            DistributionSpec::StandardGaussian { .. } => {
                out.extend((0..n * dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            }
            DistributionSpec::Moons { noise_std } => {
                for _ in 0..n {
                    let a = rng.gen_range(0.0..PI);
                    let (x, y) = if rng.gen_bool(0.5) {
                        (a.cos(), a.sin())
                    } else {
                        (1.0 - a.cos(), 0.5 - a.sin())
                    };
                    let nx: f64 = rng.sample(StandardNormal);
                    let ny: f64 = rng.sample(StandardNormal);
                    out.push(x + noise_std * nx);
                    out.push(y + noise_std * ny);
                }
            }
            _ => {
                let mix = self.as_mixture().expect("mixture variants");
                mix.sample_into(n, rng, &mut out);
            }
        }
        out
    }

    /// Exact log density; only variants with a mixture form are supported.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let mix = self
            .as_mixture()
            .ok_or_else(|| Error::UnsupportedDensity(format!("{self:?}")))?;
        if x.len() != mix.dim {
            return Err(Error::shape(mix.dim, x.len(), "density point"));
        }
        Ok(mix.log_pdf(x))
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        self.log_density(x).map(f64::exp)
    }
}

/// log N(x; mean, var) for a scalar.
pub fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * d * d / var
}

/// `log(sum(exp(xs)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(mean(exp(xs)))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

impl Mixture {
    fn component_log_pdf(&self, k: usize, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.means[k])
            .zip(&self.stds[k])
            .map(|((&xi, &m), &s)| log_normal(xi, m, s * s))
            .sum()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.weights.len())
            .map(|k| self.weights[k].ln() + self.component_log_pdf(k, x))
            .collect();
        log_sum_exp(&terms)
    }

    fn sample_into<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, out: &mut Vec<f64>) {
        let pick = WeightedIndex::new(&self.weights).expect("validated weights");
        for _ in 0..n {
            let k = pick.sample(rng);
            for (m, s) in self.means[k].iter().zip(&self.stds[k]) {
                let z: f64 = rng.sample(StandardNormal);
                out.push(m + s * z);
            }
        }
    }
}

/// One Gaussian component of a velocity law at a fixed `(x_t, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityComponent {
    /// Normalized mixture weight.
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Velocity distribution of the linear interpolation between a standard
/// Gaussian source and a diagonal Gaussian-mixture target.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityLaw {
    source: DistributionSpec,
    target: DistributionSpec,
    mix: Mixture,
}

impl VelocityLaw {
    pub fn new(source: DistributionSpec, target: DistributionSpec) -> Result<Self> {
        source.validate()?;
        target.validate()?;
        if !matches!(source, DistributionSpec::StandardGaussian { .. }) {
            return Err(Error::Config(
                "closed-form velocity laws need a standard Gaussian source".into(),
            ));
        }
        let mix = target
            .as_mixture()
            .ok_or_else(|| Error::UnsupportedDensity(format!("velocity law for target {target:?}")))?;
        if mix.dim != source.dim() {
            return Err(Error::shape(source.dim(), mix.dim, "velocity law dimensions"));
        }
        Ok(VelocityLaw { source, target, mix })
    }

    pub fn dim(&self) -> usize {
        self.mix.dim
    }

    pub fn source(&self) -> &DistributionSpec {
        &self.source
    }

    pub fn target(&self) -> &DistributionSpec {
        &self.target
    }

    fn check(&self, x: &[f64], t: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::shape(self.dim(), x.len(), "velocity law point"));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Argument(format!("t must lie in [0, 1], got {t}")));
        }
        Ok(())
    }

    /// Per-component `log(w_k N(x_t; t mu_k, sigma~^2_{k,t}))`.
    fn marginal_terms(&self, x_t: &[f64], t: f64) -> Vec<f64> {
        let m = &self.mix;
        (0..m.weights.len())
            .map(|k| {
                let lp: f64 = (0..m.dim)
                    .map(|d| {
                        let s = m.stds[k][d];
                        let var = (1.0 - t).powi(2) + t * t * s * s;
                        log_normal(x_t[d], t * m.means[k][d], var)
                    })
                    .sum();
                m.weights[k].ln() + lp
            })
            .collect()
    }

    /// log of the interpolant density at `(x_t, t)`.
    pub fn log_marginal_rho_t(&self, x_t: &[f64], t: f64) -> Result<f64> {
        self.check(x_t, t)?;
        if t == 0.0 {
            return self.source.log_density(x_t);
        }
        if t == 1.0 {
            return self.target.log_density(x_t);
        }
        Ok(log_sum_exp(&self.marginal_terms(x_t, t)))
    }

    pub fn marginal_rho_t(&self, x_t: &[f64], t: f64) -> Result<f64> {
        self.log_marginal_rho_t(x_t, t).map(f64::exp)
    }

    /// Gaussian components of the velocity distribution at `(x_t, t)`.
    /// Weights are normalized in the log domain, so this never underflows.
    pub fn components(&self, x_t: &[f64], t: f64) -> Result<Vec<VelocityComponent>> {
        self.check(x_t, t)?;
        Ok(self.components_unchecked(x_t, t))
    }

    fn components_unchecked(&self, x_t: &[f64], t: f64) -> Vec<VelocityComponent> {
        let m = &self.mix;
        let terms = self.marginal_terms(x_t, t);
        let norm = log_sum_exp(&terms);
        (0..m.weights.len())
            .map(|k| {
                let mut mean = Vec::with_capacity(m.dim);
                let mut var = Vec::with_capacity(m.dim);
                for d in 0..m.dim {
                    let s2 = m.stds[k][d].powi(2);
                    let tilde = (1.0 - t).powi(2) + t * t * s2;
                    mean.push(((1.0 - t) * (m.means[k][d] - x_t[d]) + t * s2 * x_t[d]) / tilde);
                    var.push(s2 / tilde);
                }
                VelocityComponent {
                    weight: (terms[k] - norm).exp(),
                    mean,
                    var,
                }
            })
            .collect()
    }

    /// Closed-form log velocity density at `(x_t, t)`.
    pub fn velocity_log_pdf(&self, v: &[f64], x_t: &[f64], t: f64) -> Result<f64> {
        self.check(x_t, t)?;
        if v.len() != self.dim() {
            return Err(Error::shape(self.dim(), v.len(), "velocity"));
        }
        let log_rho = self.log_marginal_rho_t(x_t, t)?;
        if log_rho < DENSITY_FLOOR.ln() {
            return Err(Error::UndefinedRegion {
                x_t: x_t.to_vec(),
                t,
                density: log_rho.exp(),
            });
        }
        let terms: Vec<f64> = self
            .components_unchecked(x_t, t)
            .iter()
            .map(|c| {
                c.weight.ln()
                    + v.iter()
                        .zip(&c.mean)
                        .zip(&c.var)
                        .map(|((&vi, &m), &s2)| log_normal(vi, m, s2))
                        .sum::<f64>()
            })
            .collect();
        Ok(log_sum_exp(&terms))
    }

    pub fn velocity_pdf(&self, v: &[f64], x_t: &[f64], t: f64) -> Result<f64> {
        self.velocity_log_pdf(v, x_t, t).map(f64::exp)
    }
}

/// Velocity density straight from the source, target and marginal densities:
/// `rho0(x_t - t v) rho1(x_t + (1 - t) v) / rho_t(x_t)`.
pub fn velocity_pdf_general<F0, F1, FT>(rho0: F0, rho1: F1, rho_t: FT, v: &[f64], x_t: &[f64], t: f64) -> Result<f64>
where
    F0: Fn(&[f64]) -> f64,
    F1: Fn(&[f64]) -> f64,
    FT: Fn(&[f64]) -> f64,
{
    let marginal = rho_t(x_t);
    if !(marginal >= DENSITY_FLOOR) {
        return Err(Error::UndefinedRegion {
            x_t: x_t.to_vec(),
            t,
            density: marginal,
        });
    }
    let src: Vec<f64> = x_t.iter().zip(v).map(|(x, v)| x - t * v).collect();
    let tgt: Vec<f64> = x_t.iter().zip(v).map(|(x, v)| x + (1.0 - t) * v).collect();
    Ok(rho0(&src) * rho1(&tgt) / marginal)
}

/// `E[V1 - V0 | V_tau = u]` for independent `V0 ~ N(0, 1)`, `V1 ~ N(m, s^2)`
/// and `V_tau = (1 - tau) V0 + tau V1`, applied per coordinate.
pub fn analytic_gaussian_acceleration(mean: &[f64], std: &[f64], u: &[f64], tau: f64) -> Vec<f64> {
    u.iter()
        .zip(mean.iter().zip(std))
        .map(|(&u, (&m, &s))| {
            let s2 = s * s;
            let cov = tau * s2 - (1.0 - tau);
            let var = (1.0 - tau).powi(2) + tau * tau * s2;
            m + cov / var * (u - tau * m)
        })
        .collect()
}

/// Expected inner direction `E[V1 - V0 | V_tau = u]` when `V1` follows a
/// diagonal Gaussian mixture and `V0 ~ N(0, I)`. Returns the value and the
/// Jacobian (row-major `dim x dim`) with respect to `u`.
pub fn mixture_acceleration(components: &[VelocityComponent], u: &[f64], tau: f64) -> (Vec<f64>, Vec<f64>) {
    let dim = u.len();
    // Posterior responsibilities of each component given V_tau = u.
    let mut logp = Vec::with_capacity(components.len());
    for c in components {
        let mut lp = c.weight.ln();
        for d in 0..dim {
            let var = (1.0 - tau).powi(2) + tau * tau * c.var[d];
            lp += log_normal(u[d], tau * c.mean[d], var);
        }
        logp.push(lp);
    }
    let norm = log_sum_exp(&logp);
    let resp: Vec<f64> = logp.iter().map(|l| (l - norm).exp()).collect();

    let mut value = vec![0.0; dim];
    let mut jac = vec![0.0; dim * dim];
    // score[k][j] = d log N_k(u) / d u_j
    let mut mean_score = vec![0.0; dim];
    let mut scores = Vec::with_capacity(components.len());
    for (c, &r) in components.iter().zip(&resp) {
        let score: Vec<f64> = (0..dim)
            .map(|j| {
                let var = (1.0 - tau).powi(2) + tau * tau * c.var[j];
                -(u[j] - tau * c.mean[j]) / var
            })
            .collect();
        for j in 0..dim {
            mean_score[j] += r * score[j];
        }
        scores.push(score);
    }
    for ((c, &r), score) in components.iter().zip(&resp).zip(&scores) {
        for i in 0..dim {
            let var = (1.0 - tau).powi(2) + tau * tau * c.var[i];
            let gain = (tau * c.var[i] - (1.0 - tau)) / var;
            let g = c.mean[i] + gain * (u[i] - tau * c.mean[i]);
            value[i] += r * g;
            for j in 0..dim {
                jac[i * dim + j] += r * (score[j] - mean_score[j]) * g;
            }
            jac[i * dim + i] += r * gain;
        }
    }
    (value, jac)
}

/// Exact depth-2 direction field for a standard Gaussian source and a
/// Gaussian-mixture target: the inner field is the expected acceleration of
/// the rectified flow from `N(0, I)` to the closed-form velocity law.
#[derive(Clone, Debug)]
pub struct OracleField {
    law: VelocityLaw,
    sources: Vec<DistributionSpec>,
}

impl OracleField {
    pub fn new(law: VelocityLaw) -> Self {
        let g = DistributionSpec::gaussian(law.dim());
        OracleField {
            sources: vec![law.source().clone(), g],
            law,
        }
    }

    pub fn law(&self) -> &VelocityLaw {
        &self.law
    }

    /// Field value and Jacobian with respect to the velocity slot.
    pub fn eval_point(&self, x_t: &[f64], t: f64, u: &[f64], tau: f64) -> (Vec<f64>, Vec<f64>) {
        let comps = self.law.components_unchecked(x_t, t.clamp(0.0, 1.0));
        mixture_acceleration(&comps, u, tau)
    }
}

impl DirectionField for OracleField {
    fn depth(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        self.law.dim()
    }

    fn sources(&self) -> &[DistributionSpec] {
        &self.sources
    }

    fn eval(&self, spaces: &[&[f64]], times: &[&[f64]], n: usize, out: &mut [f64]) -> Result<()> {
        let dim = self.dim();
        crate::field::check_eval_shapes(self, spaces, times, n, out)?;
        for r in 0..n {
            let x = &spaces[0][r * dim..(r + 1) * dim];
            let u = &spaces[1][r * dim..(r + 1) * dim];
            let (v, _) = self.eval_point(x, times[0][r], u, times[1][r]);
            out[r * dim..(r + 1) * dim].copy_from_slice(&v);
        }
        Ok(())
    }

    fn eval_with_vjp(
        &self,
        spaces: &[&[f64]],
        times: &[f64],
        cotangents: &[&[f64]],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let dim = self.dim();
        let (v, jac) = self.eval_point(spaces[0], times[0], spaces[1], times[1]);
        let vjps = cotangents
            .iter()
            .map(|c| {
                (0..dim)
                    .map(|j| (0..dim).map(|i| c[i] * jac[i * dim + j]).sum())
                    .collect()
            })
            .collect();
        Ok((v, vjps))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn two_modes() -> DistributionSpec {
        DistributionSpec::mixture_1d(&[0.5, 0.5], &[-1.0, 1.0], &[0.3, 0.3])
    }

    fn law() -> VelocityLaw {
        VelocityLaw::new(DistributionSpec::gaussian(1), two_modes()).unwrap()
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
    }

    #[test]
    fn standard_gaussian_moments() {
        let xs = DistributionSpec::gaussian(1).sample(100_000, &mut ChaCha8Rng::seed_from_u64(1));
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.02 && (v - 1.0).abs() < 0.05, "{m} {v}");
    }

    #[test]
    fn single_component_mixture_mean() {
        let spec = DistributionSpec::mixture_1d(&[1.0], &[3.0], &[0.5]);
        let xs = spec.sample(100_000, &mut ChaCha8Rng::seed_from_u64(2));
        assert!((mean_var(&xs).0 - 3.0).abs() < 0.02);
    }

    #[test]
    fn ring_components_are_uniform_on_circle() {
        let spec = DistributionSpec::GaussianRing {
            count: 8,
            radius: 8.0,
            component_std: 0.5,
        };
        let mix = spec.as_mixture().unwrap();
        for m in &mix.means {
            assert!(((m[0] * m[0] + m[1] * m[1]).sqrt() - 8.0).abs() < 1e-12);
        }
        let xs = spec.sample(10_000, &mut ChaCha8Rng::seed_from_u64(3));
        let mut counts = [0usize; 8];
        for p in xs.chunks(2) {
            let k = (0..8)
                .min_by(|&a, &b| {
                    let da = (p[0] - mix.means[a][0]).powi(2) + (p[1] - mix.means[a][1]).powi(2);
                    let db = (p[0] - mix.means[b][0]).powi(2) + (p[1] - mix.means[b][1]).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            counts[k] += 1;
        }
        let expected = 10_000.0 / 8.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of chi-square with 7 degrees of freedom
        assert!(chi2 < 18.475, "{chi2} {counts:?}");
    }

    #[test]
    fn moons_layout() {
        let xs = DistributionSpec::Moons { noise_std: 0.0 }.sample(2000, &mut ChaCha8Rng::seed_from_u64(4));
        for p in xs.chunks(2) {
            let outer = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let inner = ((p[0] - 1.0).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
            assert!((outer - 1.0).abs() < 1e-9 || (inner - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn log_density_values() {
        let g = DistributionSpec::gaussian(1);
        assert!((g.log_density(&[0.0]).unwrap() + 0.918_938_5).abs() < 1e-7);
        let m = DistributionSpec::mixture_1d(&[0.5, 0.5], &[-1.0, 1.0], &[1.0, 1.0]);
        assert!((m.log_density(&[0.0]).unwrap() + 1.418_938_5).abs() < 1e-7);
        assert!(matches!(
            DistributionSpec::Moons { noise_std: 0.1 }.log_density(&[0.0, 0.0]),
            Err(Error::UnsupportedDensity(_))
        ));
    }

    #[test]
    fn densities_integrate_to_one() {
        for spec in [DistributionSpec::gaussian(1), two_modes()] {
            let (a, b, n) = (-12.0, 12.0, 24_000);
            let h = (b - a) / n as f64;
            // composite Simpson
            let mut s = 0.0;
            for i in 0..=n {
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                s += w * spec.density(&[a + i as f64 * h]).unwrap();
            }
            assert!((s * h / 3.0 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(DistributionSpec::mixture_1d(&[0.5, 0.4], &[0.0, 1.0], &[1.0, 1.0])
            .validate()
            .is_err());
        assert!(DistributionSpec::mixture_1d(&[1.0], &[0.0], &[0.0]).validate().is_err());
        assert!(DistributionSpec::gaussian(3).validate().is_err());
        assert!(two_modes().validate().is_ok());
    }

    #[test]
    fn marginal_boundaries_are_exact() {
        let law = law();
        for x in [-2.0, -0.3, 0.0, 1.7] {
            assert_eq!(
                law.marginal_rho_t(&[x], 0.0).unwrap(),
                DistributionSpec::gaussian(1).density(&[x]).unwrap()
            );
            assert_eq!(
                law.marginal_rho_t(&[x], 1.0).unwrap(),
                two_modes().density(&[x]).unwrap()
            );
        }
    }

    #[test]
    fn marginal_single_component_closed_form() {
        let law = VelocityLaw::new(
            DistributionSpec::gaussian(1),
            DistributionSpec::mixture_1d(&[1.0], &[2.0], &[1.0]),
        )
        .unwrap();
        // x_t ~ N(1, 0.5) at t = 0.5
        let expected = (-0.5f64 * 0.0 / 0.5).exp() / (2.0 * PI * 0.5).sqrt();
        assert!((law.marginal_rho_t(&[1.0], 0.5).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn velocity_boundaries() {
        let law = law();
        let target = two_modes();
        for &v in &[-2.5, -0.4, 0.0, 0.9, 2.2] {
            for &x in &[-1.0, 0.3] {
                let at0 = law.velocity_pdf(&[v], &[x], 0.0).unwrap();
                let shifted = target.density(&[x + v]).unwrap();
                assert!(
                    (at0 - shifted).abs() <= 1e-12 * shifted.max(1e-300) + 1e-300,
                    "{at0} {shifted}"
                );
                let at1 = law.velocity_pdf(&[v], &[x], 1.0).unwrap();
                let flipped = DistributionSpec::gaussian(1).density(&[x - v]).unwrap();
                assert!((at1 - flipped).abs() <= 1e-12 * flipped);
            }
        }
    }

    #[test]
    fn general_form_matches_closed_form() {
        let law = law();
        let target = two_modes();
        let g = DistributionSpec::gaussian(1);
        for &t in &[0.0, 0.2, 0.5, 0.9] {
            for &x in &[-1.5, 0.0, 0.7] {
                for &v in &[-2.0, -0.5, 0.4, 1.8] {
                    let a = law.velocity_pdf(&[v], &[x], t).unwrap();
                    let b = velocity_pdf_general(
                        |p| g.density(p).unwrap(),
                        |p| target.density(p).unwrap(),
                        |p| law.marginal_rho_t(p, t).unwrap(),
                        &[v],
                        &[x],
                        t,
                    )
                    .unwrap();
                    assert!(
                        (a - b).abs() <= 1e-9 * a.max(b).max(1e-12),
                        "t={t} x={x} v={v}: {a} {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn general_form_symmetry_and_boundary() {
        let target = two_modes();
        let g = DistributionSpec::gaussian(1);
        let law = law();
        let at = |v: f64, t: f64, x: f64| {
            velocity_pdf_general(
                |p| g.density(p).unwrap(),
                |p| target.density(p).unwrap(),
                |p| law.marginal_rho_t(p, t).unwrap(),
                &[v],
                &[x],
                t,
            )
            .unwrap()
        };
        for v in [0.3, 1.0, 2.4] {
            assert!((at(v, 0.5, 0.0) - at(-v, 0.5, 0.0)).abs() < 1e-14);
            let expected = target.density(&[0.4 + v]).unwrap();
            assert!((at(v, 0.0, 0.4) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn undefined_region_is_typed() {
        let law = VelocityLaw::new(
            DistributionSpec::gaussian(1),
            DistributionSpec::mixture_1d(&[1.0], &[0.0], &[0.01]),
        )
        .unwrap();
        let err = law.velocity_pdf(&[0.0], &[50.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::UndefinedRegion { .. }), "{err}");
        let err = velocity_pdf_general(|_| 1.0, |_| 1.0, |_| 0.0, &[0.0], &[0.0], 0.5).unwrap_err();
        assert!(matches!(err, Error::UndefinedRegion { .. }));
    }

    #[test]
    fn component_weights_sum_to_one() {
        let law = law();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = rng.gen_range(-3.0..3.0);
            let t = rng.gen_range(0.0..=1.0);
            let total: f64 = law.components(&[x], t).unwrap().iter().map(|c| c.weight).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_acceleration_boundaries() {
        assert_eq!(analytic_gaussian_acceleration(&[0.0], &[1.0], &[0.0], 0.5), vec![0.0]);
        let a = analytic_gaussian_acceleration(&[2.0], &[0.5], &[0.7], 0.0);
        assert!((a[0] - (2.0 - 0.7)).abs() < 1e-15);
    }

    #[test]
    fn mixture_acceleration_reduces_to_gaussian_and_has_exact_jacobian() {
        let comp = [VelocityComponent {
            weight: 1.0,
            mean: vec![2.0],
            var: vec![0.25],
        }];
        let (v, _) = mixture_acceleration(&comp, &[1.0], 0.3);
        let g = analytic_gaussian_acceleration(&[2.0], &[0.5], &[1.0], 0.3);
        assert!((v[0] - g[0]).abs() < 1e-14);

        let comps = vec![
            VelocityComponent {
                weight: 0.3,
                mean: vec![-1.0, 0.5],
                var: vec![0.2, 0.4],
            },
            VelocityComponent {
                weight: 0.7,
                mean: vec![1.5, -0.2],
                var: vec![0.1, 0.3],
            },
        ];
        let u = [0.2, -0.4];
        let (_, jac) = mixture_acceleration(&comps, &u, 0.6);
        let h = 1e-6;
        for j in 0..2 {
            let mut up = u;
            up[j] += h;
            let mut dn = u;
            dn[j] -= h;
            let (a, _) = mixture_acceleration(&comps, &up, 0.6);
            let (b, _) = mixture_acceleration(&comps, &dn, 0.6);
            for i in 0..2 {
                let fd = (a[i] - b[i]) / (2.0 * h);
                assert!((jac[i * 2 + j] - fd).abs() < 1e-7, "{i}{j}");
            }
        }
    }
}
