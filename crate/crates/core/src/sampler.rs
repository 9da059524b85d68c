//! Nested Euler integration of a depth-D direction field.
//!
//! Level `d` integrates its state from a fresh source draw over `[0, 1]`
//! in `steps[d]` uniform steps. The direction of each step is the converged
//! end point of level `d + 1` run in the current context, and the innermost
//! level steps along the field itself.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DirectionField;

/// Samples integrated together; bounds memory for large requests.
const SAMPLE_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SamplerSchedule {
    /// Euler steps per level, outermost first.
    pub steps: Vec<usize>,
}

impl SamplerSchedule {
    pub fn new(steps: Vec<usize>) -> Result<Self> {
        let s = SamplerSchedule { steps };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() || self.steps.contains(&0) {
            return Err(Error::Config(format!(
                "schedule {:?} needs >= 1 step at every level",
                self.steps
            )));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    /// Field evaluations per generated sample.
    pub fn nfe(&self) -> u64 {
        self.steps.iter().map(|&s| s as u64).product()
    }
}

impl std::fmt::Display for SamplerSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.steps.iter().map(usize::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerOptions {
    /// Draw each inner level's start point once per sample instead of at
    /// every step of the enclosing level.
    #[serde(default)]
    pub reuse_inner_source: bool,
    #[serde(default)]
    pub record_trajectories: bool,
    /// Record at most this many trajectories (the first samples); `None` keeps all.
    #[serde(default)]
    pub trajectory_limit: Option<usize>,
}

/// Outer-level positions of one sample at times `j / N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Linear interpolation between recorded positions.
    pub fn position_at(&self, t: f64) -> Vec<f64> {
        let last = self.times.len() - 1;
        let t = t.clamp(0.0, 1.0);
        let j = self
            .times
            .partition_point(|&s| s <= t)
            .saturating_sub(1)
            .min(last.saturating_sub(1));
        if last == 0 {
            return self.positions[0].clone();
        }
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let w = (t - t0) / (t1 - t0);
        self.positions[j]
            .iter()
            .zip(&self.positions[j + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    /// Sum over interior steps of `|dz_j - dz_{j-1}|`, a curvature proxy.
    pub fn bending(&self) -> f64 {
        let steps: Vec<Vec<f64>> = self
            .positions
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
            .collect();
        steps
            .windows(2)
            .map(|w| {
                w[1].iter()
                    .zip(&w[0])
                    .map(|(b, a)| (b - a) * (b - a))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct SampleSet {
    pub dim: usize,
    /// `n x dim` row-major.
    pub points: Vec<f64>,
    pub trajectories: Option<Vec<Trajectory>>,
    pub nfe_per_sample: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

struct Nested<'a, F: ?Sized, R> {
    field: &'a F,
    steps: &'a [usize],
    n: usize,
    dim: usize,
    rng: &'a mut R,
    /// Fixed start points per level when inner sources are reused.
    fixed_starts: Option<Vec<Vec<f64>>>,
}

impl<F: DirectionField + ?Sized, R: Rng> Nested<'_, F, R> {
    fn start(&mut self, level: usize) -> Vec<f64> {
        match &self.fixed_starts {
            Some(starts) => starts[level].clone(),
            None => self.field.sources()[level].sample(self.n, self.rng),
        }
    }

    /// Integrates level `level` given the outer context and returns its end point.
    fn integrate(
        &mut self,
        level: usize,
        spaces: &mut Vec<Vec<f64>>,
        times: &mut Vec<Vec<f64>>,
        mut record: Option<&mut Vec<Vec<f64>>>,
    ) -> Result<Vec<f64>> {
        let steps = self.steps[level];
        let dt = 1.0 / steps as f64;
        let innermost = level + 1 == self.steps.len();
        let mut z = self.start(level);
        if let Some(rec) = record.as_deref_mut() {
            rec.push(z.clone());
        }
        for j in 0..steps {
            let t = j as f64 / steps as f64;
            spaces.push(z);
            times.push(vec![t; self.n]);
            let dir = if innermost {
                let s: Vec<&[f64]> = spaces.iter().map(Vec::as_slice).collect();
                let ts: Vec<&[f64]> = times.iter().map(Vec::as_slice).collect();
                let mut out = vec![0.0; self.n * self.dim];
                self.field.eval(&s, &ts, self.n, &mut out)?;
                out
            } else {
                self.integrate(level + 1, spaces, times, None)?
            };
            times.pop();
            z = spaces.pop().expect("pushed above");
            for (zi, di) in z.iter_mut().zip(&dir) {
                *zi += dt * di;
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.push(z.clone());
            }
        }
        Ok(z)
    }
}

fn check_schedule<F: DirectionField + ?Sized>(field: &F, schedule: &SamplerSchedule) -> Result<()> {
    schedule.validate()?;
    if schedule.depth() != field.depth() {
        return Err(Error::Config(format!(
            "schedule {schedule} has depth {} but the model has depth {}",
            schedule.depth(),
            field.depth()
        )));
    }
    Ok(())
}

/// Generates `n` samples; the same rng state always gives the same output.
pub fn sample_batch<F: DirectionField + ?Sized, R: Rng>(
    field: &F,
    schedule: &SamplerSchedule,
    n: usize,
    rng: &mut R,
    options: SamplerOptions,
) -> Result<SampleSet> {
    check_schedule(field, schedule)?;
    if n == 0 {
        return Err(Error::Argument("number of samples must be >= 1".into()));
    }
    let dim = field.dim();
    let outer = schedule.steps[0];
    let times: Vec<f64> = (0..=outer).map(|j| j as f64 / outer as f64).collect();
    let mut points = Vec::with_capacity(n * dim);
    let mut trajectories = options.record_trajectories.then(|| Vec::with_capacity(n));
    let mut done = 0;
    while done < n {
        let m = SAMPLE_CHUNK.min(n - done);
        let fixed_starts = options
            .reuse_inner_source
            .then(|| field.sources().iter().map(|s| s.sample(m, rng)).collect());
        let mut nested = Nested {
            field,
            steps: &schedule.steps,
            n: m,
            dim,
            rng,
            fixed_starts,
        };
        let mut record = Vec::new();
        let z = nested.integrate(
            0,
            &mut Vec::with_capacity(schedule.depth()),
            &mut Vec::with_capacity(schedule.depth()),
            (trajectories.is_some() && options.trajectory_limit.is_none_or(|k| done < k)).then_some(&mut record),
        )?;
        if let Some(trajs) = trajectories.as_mut() {
            let keep = options.trajectory_limit.map_or(m, |k| k.saturating_sub(done).min(m));
            for r in 0..keep {
                trajs.push(Trajectory {
                    times: times.clone(),
                    positions: record.iter().map(|p| p[r * dim..(r + 1) * dim].to_vec()).collect(),
                });
            }
        }
        points.extend_from_slice(&z);
        done += m;
    }
    Ok(SampleSet {
        dim,
        points,
        trajectories,
        nfe_per_sample: schedule.nfe(),
    })
}

/// One sample together with its outer-level trajectory.
pub fn sample_one<F: DirectionField + ?Sized, R: Rng>(
    field: &F,
    schedule: &SamplerSchedule,
    rng: &mut R,
) -> Result<(Vec<f64>, Trajectory)> {
    let options = SamplerOptions {
        record_trajectories: true,
        ..Default::default()
    };
    let set = sample_batch(field, schedule, 1, rng, options)?;
    let traj = set.trajectories.and_then(|mut t| t.pop()).expect("recorded");
    Ok((set.points, traj))
}
