//! Monte Carlo checks of the closed-form velocity law.

use rand::Rng;
use serde::Serialize;

use crate::distributions::VelocityLaw;
use crate::error::{Error, Result};
use crate::metrics::histogram;

/// Pairs drawn per batch during rejection sampling.
const DRAW_BATCH: usize = 1 << 16;

/// Velocities `x1 - x0` of independent pairs whose interpolant at time `t`
/// lands within `window` of `x_t` (1D laws only). Returns the accepted
/// velocities and the number of pairs drawn.
pub fn conditional_velocities<R: Rng + ?Sized>(
    law: &VelocityLaw,
    x_t: f64,
    t: f64,
    window: f64,
    n_accept: usize,
    max_draws: u64,
    rng: &mut R,
) -> Result<(Vec<f64>, u64)> {
    if law.dim() != 1 {
        return Err(Error::Argument(
            "conditional velocity sampling supports 1D laws only".into(),
        ));
    }
    if !(window > 0.0) || !(0.0..=1.0).contains(&t) {
        return Err(Error::Argument(format!(
            "need window > 0 and t in [0, 1], got {window}, {t}"
        )));
    }
    let mut accepted = Vec::with_capacity(n_accept);
    let mut draws = 0u64;
    while accepted.len() < n_accept && draws < max_draws {
        let x0 = law.source().sample(DRAW_BATCH, rng);
        let x1 = law.target().sample(DRAW_BATCH, rng);
        draws += DRAW_BATCH as u64;
        for (a, b) in x0.iter().zip(&x1) {
            if ((1.0 - t) * a + t * b - x_t).abs() < window {
                accepted.push(b - a);
                if accepted.len() == n_accept {
                    break;
                }
            }
        }
    }
    Ok((accepted, draws))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Ok,
    /// The marginal density vanishes at `x_t`, so the law is undefined.
    Undefined,
    /// The draw budget ran out before enough samples were accepted.
    Insufficient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityCheck {
    pub x_t: f64,
    pub t: f64,
    pub status: CheckStatus,
    /// Bin centres of the velocity grid.
    pub grid: Vec<f64>,
    pub bin_width: f64,
    /// Closed-form density averaged over each bin.
    pub analytic: Vec<f64>,
    pub empirical: Vec<f64>,
    /// `sum |empirical - analytic| * bin_width`.
    pub l1: f64,
    pub n_accepted: usize,
    pub n_draws: u64,
}

/// Compares the closed-form velocity density at `(x_t, t)` with a
/// histogram of conditioned Monte Carlo velocities.
#[allow(clippy::too_many_arguments)]
pub fn velocity_check<R: Rng + ?Sized>(
    law: &VelocityLaw,
    x_t: f64,
    t: f64,
    window: f64,
    n_accept: usize,
    bins: usize,
    max_draws: u64,
    rng: &mut R,
) -> Result<VelocityCheck> {
    let undefined = || VelocityCheck {
        x_t,
        t,
        status: CheckStatus::Undefined,
        grid: Vec::new(),
        bin_width: 0.0,
        analytic: Vec::new(),
        empirical: Vec::new(),
        l1: f64::NAN,
        n_accepted: 0,
        n_draws: 0,
    };
    let comps = match law.velocity_log_pdf(&[0.0], &[x_t], t) {
        Err(Error::UndefinedRegion { .. }) => return Ok(undefined()),
        Err(e) => return Err(e),
        Ok(_) => law.components(&[x_t], t)?,
    };
    let lo = comps
        .iter()
        .map(|c| c.mean[0] - 6.0 * c.var[0].sqrt())
        .fold(f64::INFINITY, f64::min);
    let hi = comps
        .iter()
        .map(|c| c.mean[0] + 6.0 * c.var[0].sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let grid: Vec<f64> = (0..bins).map(|k| lo + (k as f64 + 0.5) * width).collect();
    // Simpson's rule over each bin.
    let analytic = (0..bins)
        .map(|k| {
            let a = lo + k as f64 * width;
            let sub = 8;
            let h = width / sub as f64;
            let mut s = 0.0;
            for i in 0..=sub {
                let w = if i == 0 || i == sub {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                s += w * law.velocity_pdf(&[a + i as f64 * h], &[x_t], t)?;
            }
            Ok(s * h / 3.0 / width)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (vs, n_draws) = conditional_velocities(law, x_t, t, window, n_accept, max_draws, rng)?;
    let status = if vs.len() < n_accept {
        CheckStatus::Insufficient
    } else {
        CheckStatus::Ok
    };
    let empirical = histogram(&vs, bins, (lo, hi))?;
    let l1 = empirical.iter().zip(&analytic).map(|(e, a)| (e - a).abs()).sum::<f64>() * width;
    Ok(VelocityCheck {
        x_t,
        t,
        status,
        grid,
        bin_width: width,
        analytic,
        empirical,
        l1,
        n_accepted: vs.len(),
        n_draws,
    })
}
