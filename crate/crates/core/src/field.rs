//! The direction-field abstraction shared by trained networks and analytic
//! oracles.

use std::cell::Cell;

use crate::distributions::DistributionSpec;
use crate::error::{Error, Result};

/// A depth-`D` field `f(x^(1..D), t^(1..D))` together with the source
/// distribution of every level.
pub trait DirectionField {
    fn depth(&self) -> usize;
    fn dim(&self) -> usize;

    /// One source distribution per level, outermost first.
    fn sources(&self) -> &[DistributionSpec];

    /// Evaluates `n` points. `spaces[d]` is `n x dim` row-major, `times[d]`
    /// has `n` entries, `out` receives `n x dim`.
    fn eval(&self, spaces: &[&[f64]], times: &[&[f64]], n: usize, out: &mut [f64]) -> Result<()>;

    /// Single-point value plus one vector-Jacobian product per cotangent,
    /// taken with respect to the innermost space slot.
    fn eval_with_vjp(
        &self,
        spaces: &[&[f64]],
        times: &[f64],
        cotangents: &[&[f64]],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)>;
}

pub(crate) fn check_eval_shapes<F: DirectionField + ?Sized>(
    field: &F,
    spaces: &[&[f64]],
    times: &[&[f64]],
    n: usize,
    out: &[f64],
) -> Result<()> {
    let (depth, dim) = (field.depth(), field.dim());
    if spaces.len() != depth || times.len() != depth {
        return Err(Error::shape(depth, spaces.len().min(times.len()), "field slots"));
    }
    for (s, t) in spaces.iter().zip(times) {
        if s.len() != n * dim || t.len() != n {
            return Err(Error::shape(n * dim, s.len(), "field slot batch"));
        }
    }
    if out.len() != n * dim {
        return Err(Error::shape(n * dim, out.len(), "field output"));
    }
    Ok(())
}

/// Wraps a field and counts how many points have been evaluated.
pub struct CountingField<'a, F: ?Sized> {
    inner: &'a F,
    evaluations: Cell<u64>,
}

impl<'a, F: DirectionField + ?Sized> CountingField<'a, F> {
    pub fn new(inner: &'a F) -> Self {
        CountingField {
            inner,
            evaluations: Cell::new(0),
        }
    }

    /// Total number of single-point evaluations so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.get()
    }
}

impl<F: DirectionField + ?Sized> DirectionField for CountingField<'_, F> {
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sources(&self) -> &[DistributionSpec] {
        self.inner.sources()
    }

    fn eval(&self, spaces: &[&[f64]], times: &[&[f64]], n: usize, out: &mut [f64]) -> Result<()> {
        self.evaluations.set(self.evaluations.get() + n as u64);
        self.inner.eval(spaces, times, n, out)
    }

    fn eval_with_vjp(
        &self,
        spaces: &[&[f64]],
        times: &[f64],
        cotangents: &[&[f64]],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.evaluations.set(self.evaluations.get() + 1);
        self.inner.eval_with_vjp(spaces, times, cotangents)
    }
}
