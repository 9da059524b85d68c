//! Likelihood of generated points through the learned velocity distribution.
//!
//! For a depth-2 field, `log pi1(u; z_t, t)` follows from integrating the
//! inner flow backward from `u` at `tau = 1` to its source point `u0` while
//! accumulating the divergence of the field:
//!
//! ```text
//! log pi1(u) = log pi0(u0) - integral_0^1 div_u a(z_t, t, u_tau, tau) d tau
//! ```
//!
//! This is the usual instantaneous change of variables; the sign was checked
//! against the closed-form velocity law of Gaussian mixtures.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distributions::log_mean_exp;
use crate::error::{Error, Result};
use crate::field::DirectionField;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            atol: 1e-5,
            rtol: 1e-5,
            max_steps: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.atol > 0.0 && self.rtol > 0.0) || self.max_steps == 0 {
            return Err(Error::Config(format!(
                "solver needs atol, rtol > 0 and max_steps >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeSolution {
    pub y: Vec<f64>,
    /// Accepted steps.
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Difference between the fifth- and fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn rms_norm(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    (v.map(|x| x * x).sum::<f64>() / n as f64).sqrt()
}

/// Adaptive Dormand-Prince integration of `dy/dtau = f(tau, y)` from
/// `span.0` to `span.1` (either direction). Errors are controlled per
/// component against `atol + rtol * |y|`.
pub fn rk45_solve<F>(mut f: F, y0: &[f64], span: (f64, f64), cfg: &SolverConfig) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    cfg.validate()?;
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("ODE initial state must be finite".into()));
    }
    let n = y0.len();
    let (t0, t1) = span;
    let mut sol = OdeSolution {
        y: y0.to_vec(),
        steps: 0,
        rejected: 0,
        evaluations: 0,
    };
    if n == 0 || t0 == t1 {
        return Ok(sol);
    }
    let dir = (t1 - t0).signum();
    let mut k = vec![vec![0.0; n]; 7];
    f(t0, &sol.y, &mut k[0])?;
    sol.evaluations += 1;

    // Initial step from the scale of y and f.
    let scale: Vec<f64> = sol.y.iter().map(|y| cfg.atol + y.abs() * cfg.rtol).collect();
    let d0 = rms_norm(sol.y.iter().zip(&scale).map(|(y, s)| y / s), n);
    let d1 = rms_norm(k[0].iter().zip(&scale).map(|(f, s)| f / s), n);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min((t1 - t0).abs());

    let mut t = t0;
    let mut y_stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut last_err = f64::NAN;
    while (t1 - t) * dir > 0.0 {
        if sol.steps + sol.rejected >= cfg.max_steps {
            return Err(Error::Solver {
                steps: sol.steps + sol.rejected,
                tau: t,
                error_estimate: last_err,
            });
        }
        let min_step = 10.0 * (f64::EPSILON * t.abs()).max(f64::MIN_POSITIVE);
        if h < min_step {
            return Err(Error::Solver {
                steps: sol.steps + sol.rejected,
                tau: t,
                error_estimate: last_err,
            });
        }
        let last = h >= (t1 - t).abs();
        let hs = if last { t1 - t } else { h * dir };
        for s in 1..7 {
            for i in 0..n {
                y_stage[i] = sol.y[i] + hs * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
            }
            f(t + C[s] * hs, &y_stage, &mut k[s])?;
            sol.evaluations += 1;
        }
        // Stage 6 was evaluated at the fifth-order solution, which is y_stage.
        y_new.copy_from_slice(&y_stage);
        debug_assert!((0..n).all(|i| {
            let v = sol.y[i] + hs * (0..7).map(|j| B[j] * k[j][i]).sum::<f64>();
            (v - y_new[i]).abs() <= 1e-12 * (1.0 + v.abs())
        }));
        let err = rms_norm(
            (0..n).map(|i| {
                let e = hs * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
                e / (cfg.atol + sol.y[i].abs().max(y_new[i].abs()) * cfg.rtol)
            }),
            n,
        );
        last_err = err;
        if err.is_finite() && err <= 1.0 {
            t = if last { t1 } else { t + hs };
            sol.y.copy_from_slice(&y_new);
            k.swap(0, 6);
            sol.steps += 1;
            let factor = if err == 0.0 {
                10.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 10.0)
            };
            h = hs.abs() * factor;
        } else {
            sol.rejected += 1;
            let factor = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.2, 1.0)
            } else {
                0.2
            };
            h = hs.abs() * factor;
        }
    }
    if sol.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver {
            steps: sol.steps,
            tau: t,
            error_estimate: last_err,
        });
    }
    Ok(sol)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeLaw {
    #[default]
    Rademacher,
    Gaussian,
}

pub fn draw_probes<R: Rng + ?Sized>(dim: usize, count: usize, law: ProbeLaw, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            (0..dim)
                .map(|_| match law {
                    ProbeLaw::Rademacher => {
                        if rng.gen::<bool>() {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    ProbeLaw::Gaussian => rng.sample(StandardNormal),
                })
                .collect()
        })
        .collect()
}

/// A function that returns its value at a point together with one
/// vector-Jacobian product per cotangent.
pub trait VjpFn {
    fn value_and_vjps(&self, point: &[f64], cotangents: &[&[f64]]) -> Result<(Vec<f64>, Vec<Vec<f64>>)>;
}

impl<F> VjpFn for F
where
    F: Fn(&[f64], &[&[f64]]) -> Result<(Vec<f64>, Vec<Vec<f64>>)>,
{
    fn value_and_vjps(&self, point: &[f64], cotangents: &[&[f64]]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self(point, cotangents)
    }
}

/// Mean of `e^T J e` over the given probes.
pub fn probe_divergence<F: VjpFn + ?Sized>(field: &F, point: &[f64], probes: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let refs: Vec<&[f64]> = probes.iter().map(Vec::as_slice).collect();
    let (value, vjps) = field.value_and_vjps(point, &refs)?;
    let total: f64 = probes
        .iter()
        .zip(&vjps)
        .map(|(e, g)| e.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok((value, total / probes.len().max(1) as f64))
}

/// Skilling-Hutchinson estimate of the Jacobian trace at `point`.
pub fn hutchinson_divergence<F: VjpFn + ?Sized, R: Rng + ?Sized>(
    field: &F,
    point: &[f64],
    n_probes: usize,
    rng: &mut R,
    law: ProbeLaw,
) -> Result<f64> {
    if n_probes == 0 {
        return Err(Error::Argument("Hutchinson estimator needs >= 1 probe".into()));
    }
    let probes = draw_probes(point.len(), n_probes, law, rng);
    Ok(probe_divergence(field, point, &probes)?.1)
}

/// Exact trace from one VJP per basis vector.
pub fn exact_divergence<F: VjpFn + ?Sized>(field: &F, point: &[f64]) -> Result<f64> {
    let basis = basis(point.len());
    Ok(probe_divergence(field, point, &basis)?.1 * point.len() as f64)
}

fn basis(dim: usize) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|i| {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            e
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceMode {
    /// Exact in one dimension, Hutchinson otherwise.
    #[default]
    Auto,
    Exact,
    Hutchinson,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodConfig {
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub trace: TraceMode,
    /// Probes per divergence evaluation, held fixed during one solve.
    #[serde(default = "one")]
    pub n_probes: usize,
    #[serde(default)]
    pub probe_law: ProbeLaw,
}

fn one() -> usize {
    1
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig {
            solver: SolverConfig::default(),
            trace: TraceMode::Auto,
            n_probes: 1,
            probe_law: ProbeLaw::Rademacher,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityLikelihood {
    /// `log pi1(u; z_t, t)` in nats.
    pub log_density: f64,
    /// Source point reached at `tau = 0`.
    pub u0: Vec<f64>,
    /// `integral_0^1 div a d tau`.
    pub divergence_integral: f64,
    pub solver_steps: usize,
    pub evaluations: usize,
}

fn require_depth_two<F: DirectionField + ?Sized>(field: &F) -> Result<()> {
    if field.depth() != 2 {
        return Err(Error::Config(format!(
            "likelihood needs a depth-2 model, got depth {}",
            field.depth()
        )));
    }
    Ok(())
}

/// `log pi1(u; z_t, t)` of a depth-2 field by backward integration of the
/// inner flow with divergence accumulation.
pub fn velocity_log_likelihood<F: DirectionField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    u: &[f64],
    z_t: &[f64],
    t: f64,
    cfg: &LikelihoodConfig,
    rng: &mut R,
) -> Result<VelocityLikelihood> {
    require_depth_two(field)?;
    let dim = field.dim();
    if u.len() != dim || z_t.len() != dim {
        return Err(Error::shape(dim, u.len().min(z_t.len()), "likelihood point"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Argument(format!("t must lie in [0, 1], got {t}")));
    }
    let exact = match cfg.trace {
        TraceMode::Auto => dim == 1,
        TraceMode::Exact => true,
        TraceMode::Hutchinson => false,
    };
    let (probes, weight) = if exact {
        (basis(dim), dim as f64)
    } else {
        if cfg.n_probes == 0 {
            return Err(Error::Config("n_probes must be >= 1".into()));
        }
        (draw_probes(dim, cfg.n_probes, cfg.probe_law, rng), 1.0)
    };
    let rhs = |tau: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let at = |p: &[f64], c: &[&[f64]]| field.eval_with_vjp(&[z_t, p], &[t, tau], c);
        let (value, div) = probe_divergence(&at, &y[..dim], &probes)?;
        dy[..dim].copy_from_slice(&value);
        dy[dim] = weight * div;
        Ok(())
    };
    let mut y0 = u.to_vec();
    y0.push(0.0);
    let sol = rk45_solve(rhs, &y0, (1.0, 0.0), &cfg.solver)?;
    let u0 = sol.y[..dim].to_vec();
    // The last component holds integral_1^0 div = -integral_0^1 div.
    let divergence_integral = -sol.y[dim];
    let log_source = field.sources()[1].log_density(&u0)?;
    Ok(VelocityLikelihood {
        log_density: log_source - divergence_integral,
        u0,
        divergence_integral,
        solver_steps: sol.steps,
        evaluations: sol.evaluations,
    })
}

pub fn bits_per_dim(log_density_nats: f64, dim: usize) -> f64 {
    -log_density_nats / (dim as f64 * std::f64::consts::LN_2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Velocity distribution at `t = 0`, averaged over source points.
    Alg3T0,
    /// Velocity distribution at an interior `t` combined with a Monte Carlo
    /// estimate of the interpolant marginal.
    Alg4T,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Alg3T0 => "alg3-t0",
            Estimator::Alg4T => "alg4-t",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LikelihoodReport {
    pub log_density: f64,
    pub bpd: f64,
    pub estimator: Estimator,
    /// Interior times used by the t-based estimator.
    pub t: Vec<f64>,
    /// Source draws averaged over (Alg3) or used for the marginal (Alg4).
    pub n_outer_samples: usize,
    pub n_probes: usize,
    pub solver_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alg3Options {
    #[serde(default = "one")]
    pub n_avg: usize,
    /// Use the single source point `z0 = 0`.
    #[serde(default)]
    pub pin_z0: bool,
    #[serde(default)]
    pub likelihood: LikelihoodConfig,
}

impl Default for Alg3Options {
    fn default() -> Self {
        Alg3Options {
            n_avg: 1,
            pin_z0: false,
            likelihood: LikelihoodConfig::default(),
        }
    }
}

fn n_probes_used(cfg: &LikelihoodConfig, dim: usize) -> usize {
    match cfg.trace {
        TraceMode::Exact => dim,
        TraceMode::Auto if dim == 1 => dim,
        _ => cfg.n_probes,
    }
}

/// `rho1(z1)` as the mean over `z0 ~ rho0` of `pi1(z1 - z0; z0, 0)`.
pub fn density_alg3<F: DirectionField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    z1: &[f64],
    rng: &mut R,
    opts: &Alg3Options,
) -> Result<LikelihoodReport> {
    require_depth_two(field)?;
    let dim = field.dim();
    if z1.len() != dim {
        return Err(Error::shape(dim, z1.len(), "density point"));
    }
    let draws = if opts.pin_z0 { 1 } else { opts.n_avg };
    if draws == 0 {
        return Err(Error::Argument("n_avg must be >= 1".into()));
    }
    let mut logs = Vec::with_capacity(draws);
    let mut steps = 0;
    for _ in 0..draws {
        let z0 = if opts.pin_z0 {
            vec![0.0; dim]
        } else {
            field.sources()[0].sample(1, rng)
        };
        let v: Vec<f64> = z1.iter().zip(&z0).map(|(a, b)| a - b).collect();
        let lik = velocity_log_likelihood(field, &v, &z0, 0.0, &opts.likelihood, rng)?;
        steps += lik.solver_steps;
        logs.push(lik.log_density);
    }
    let log_density = log_mean_exp(&logs);
    Ok(LikelihoodReport {
        log_density,
        bpd: bits_per_dim(log_density, dim),
        estimator: Estimator::Alg3T0,
        t: Vec::new(),
        n_outer_samples: draws,
        n_probes: n_probes_used(&opts.likelihood, dim),
        solver_steps: steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum TimeChoice {
    Fixed(f64),
    /// Uniform on (0, 1), redrawn for every estimate.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alg4Options {
    /// Source draws in the Monte Carlo estimate of the marginal at `t`.
    #[serde(default = "default_n_rho")]
    pub n_rho: usize,
    #[serde(default = "random_time")]
    pub t: TimeChoice,
    /// Number of independent estimates averaged in the log domain.
    #[serde(default = "one")]
    pub n_t: usize,
    #[serde(default)]
    pub likelihood: LikelihoodConfig,
}

fn random_time() -> TimeChoice {
    TimeChoice::Random
}

fn default_n_rho() -> usize {
    1000
}

impl Default for Alg4Options {
    fn default() -> Self {
        Alg4Options {
            n_rho: default_n_rho(),
            t: TimeChoice::Random,
            n_t: 1,
            likelihood: LikelihoodConfig::default(),
        }
    }
}

/// `log rho1(z1) = log pi1(u; z_t, t) + log rho_t(z_t) - log rho0(z_t - t u)`
/// where `z_t + (1 - t) u = z1`.
pub fn log_target_from_velocity(log_velocity: f64, log_marginal: f64, log_source: f64) -> f64 {
    log_velocity + log_marginal - log_source
}

/// Monte Carlo `log rho_t(z_t)` from one-step flows out of `n` source points:
/// the mean over `z0 ~ rho0` of `pi1((z_t - z0) / t; z0, 0) / t^dim`.
pub fn log_marginal_estimate<F: DirectionField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    z_t: &[f64],
    t: f64,
    n: usize,
    cfg: &LikelihoodConfig,
    rng: &mut R,
) -> Result<(f64, usize)> {
    let dim = field.dim();
    let mut logs = Vec::with_capacity(n);
    let mut steps = 0;
    for _ in 0..n {
        let z0 = field.sources()[0].sample(1, rng);
        let v: Vec<f64> = z_t.iter().zip(&z0).map(|(a, b)| (a - b) / t).collect();
        let lik = velocity_log_likelihood(field, &v, &z0, 0.0, cfg, rng)?;
        steps += lik.solver_steps;
        logs.push(lik.log_density - dim as f64 * t.ln());
    }
    Ok((log_mean_exp(&logs), steps))
}

pub fn density_alg4<F: DirectionField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    z1: &[f64],
    rng: &mut R,
    opts: &Alg4Options,
) -> Result<LikelihoodReport> {
    require_depth_two(field)?;
    let dim = field.dim();
    if z1.len() != dim {
        return Err(Error::shape(dim, z1.len(), "density point"));
    }
    if opts.n_rho == 0 || opts.n_t == 0 {
        return Err(Error::Argument("n_rho and n_t must be >= 1".into()));
    }
    if let TimeChoice::Fixed(t) = opts.t {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Argument(format!(
                "the t-based estimator needs t strictly inside (0, 1), got {t}"
            )));
        }
    }
    let source = &field.sources()[0];
    let mut logs = Vec::with_capacity(opts.n_t);
    let mut ts = Vec::with_capacity(opts.n_t);
    let mut steps = 0;
    for _ in 0..opts.n_t {
        let t = match opts.t {
            TimeChoice::Fixed(t) => t,
            TimeChoice::Random => loop {
                let t: f64 = rng.gen();
                if t > 0.0 {
                    break t;
                }
            },
        };
        let z0 = source.sample(1, rng);
        let z_t: Vec<f64> = z0.iter().zip(z1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let u: Vec<f64> = z1.iter().zip(&z0).map(|(b, a)| b - a).collect();
        let lik = velocity_log_likelihood(field, &u, &z_t, t, &opts.likelihood, rng)?;
        let (log_rho_t, s) = log_marginal_estimate(field, &z_t, t, opts.n_rho, &opts.likelihood, rng)?;
        steps += lik.solver_steps + s;
        logs.push(log_target_from_velocity(
            lik.log_density,
            log_rho_t,
            source.log_density(&z0)?,
        ));
        ts.push(t);
    }
    let log_density = log_mean_exp(&logs);
    Ok(LikelihoodReport {
        log_density,
        bpd: bits_per_dim(log_density, dim),
        estimator: Estimator::Alg4T,
        t: ts,
        n_outer_samples: opts.n_rho,
        n_probes: n_probes_used(&opts.likelihood, dim),
        solver_steps: steps,
    })
}
