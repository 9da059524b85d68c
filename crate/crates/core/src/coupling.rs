//! Pairing of source and target minibatch samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest batch accepted by the exact assignment solver.
pub const DEFAULT_OT_CAP: usize = 1024;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    #[default]
    Independent,
    Ot,
}

/// `permutation[i]` is the target index paired with source `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchCoupling {
    pub permutation: Vec<usize>,
    /// Mean squared Euclidean distance over the pairs.
    pub transport_cost: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check(x0s: &[f64], x1s: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || !x0s.len().is_multiple_of(dim) {
        return Err(Error::Argument(format!(
            "batch length {} not a multiple of dim {dim}",
            x0s.len()
        )));
    }
    if x0s.len() != x1s.len() {
        return Err(Error::Argument(format!(
            "coupling needs equal batch sizes, got {} and {} values",
            x0s.len(),
            x1s.len()
        )));
    }
    Ok(x0s.len() / dim)
}

pub fn coupling_cost(x0s: &[f64], x1s: &[f64], dim: usize, permutation: &[usize]) -> f64 {
    let n = permutation.len();
    if n == 0 {
        return 0.0;
    }
    permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| sq_dist(&x0s[i * dim..(i + 1) * dim], &x1s[j * dim..(j + 1) * dim]))
        .sum::<f64>()
        / n as f64
}

/// Identity pairing; inputs are assumed to be independent draws already.
pub fn independent_coupling(x0s: &[f64], x1s: &[f64], dim: usize) -> Result<BatchCoupling> {
    let n = check(x0s, x1s, dim)?;
    let permutation: Vec<usize> = (0..n).collect();
    let transport_cost = coupling_cost(x0s, x1s, dim, &permutation);
    Ok(BatchCoupling {
        permutation,
        transport_cost,
    })
}

/// Exact minimum-cost pairing under squared Euclidean cost.
pub fn ot_coupling(x0s: &[f64], x1s: &[f64], dim: usize, cap: usize) -> Result<BatchCoupling> {
    let n = check(x0s, x1s, dim)?;
    if n > cap {
        return Err(Error::Config(format!(
            "OT batch of {n} exceeds the assignment cap {cap}; use a smaller OT sub-batch"
        )));
    }
    let permutation = if dim == 1 {
        monotone_matching(x0s, x1s)
    } else {
        assignment(x0s, x1s, dim, n)
    };
    let transport_cost = coupling_cost(x0s, x1s, dim, &permutation);
    Ok(BatchCoupling {
        permutation,
        transport_cost,
    })
}

/// In one dimension the squared-distance optimum pairs the k-th smallest
/// source point with the k-th smallest target point.
fn monotone_matching(x0s: &[f64], x1s: &[f64]) -> Vec<usize> {
    let order = |xs: &[f64]| {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        idx
    };
    let (o0, o1) = (order(x0s), order(x1s));
    let mut permutation = vec![0; x0s.len()];
    for (&i, &j) in o0.iter().zip(&o1) {
        permutation[i] = j;
    }
    permutation
}

fn assignment(x0s: &[f64], x1s: &[f64], dim: usize, n: usize) -> Vec<usize> {
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = sq_dist(&x0s[i * dim..(i + 1) * dim], &x1s[j * dim..(j + 1) * dim]);
        }
    }
    hungarian(&cost, n)
}

/// Kuhn-Munkres with potentials, O(n^3). `cost` is `n x n` row-major;
/// returns the column assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays, index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

/// Reorders `x1s` in place so that row `i` is paired with source row `i`.
/// OT is solved independently on consecutive sub-batches of `ot_batch` rows.
pub fn couple_for_training(
    mode: CouplingMode,
    x0s: &[f64],
    x1s: &mut [f64],
    dim: usize,
    ot_batch: usize,
    cap: usize,
) -> Result<()> {
    let n = check(x0s, x1s, dim)?;
    match mode {
        CouplingMode::Independent => Ok(()),
        CouplingMode::Ot => {
            if ot_batch == 0 {
                return Err(Error::Config("OT sub-batch must be >= 1".into()));
            }
            let mut start = 0;
            while start < n {
                let end = (start + ot_batch).min(n);
                let (a, b) = (start * dim, end * dim);
                let plan = ot_coupling(&x0s[a..b], &x1s[a..b], dim, cap)?;
                let chunk = x1s[a..b].to_vec();
                for (i, &j) in plan.permutation.iter().enumerate() {
                    x1s[a + i * dim..a + (i + 1) * dim].copy_from_slice(&chunk[j * dim..(j + 1) * dim]);
                }
                start = end;
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn sorted_matching_is_optimal_in_one_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..40 {
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let x1: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let fast = ot_coupling(&x0, &x1, 1, 1024).unwrap();
            let exact = assignment(&x0, &x1, 1, n);
            let exact_cost = coupling_cost(&x0, &x1, 1, &exact);
            assert!(fast.transport_cost <= exact_cost + 1e-12, "n = {n}");
        }
    }

    #[test]
    fn independent_is_identity() {
        let c = independent_coupling(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0], 1).unwrap();
        assert_eq!(c.permutation, vec![0, 1, 2]);
        assert!((c.transport_cost - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        assert!(matches!(
            independent_coupling(&[0.0, 1.0], &[1.0], 1),
            Err(Error::Argument(_))
        ));
        assert!(ot_coupling(&[0.0, 1.0], &[1.0], 1, 8).is_err());
    }

    #[test]
    fn swapped_points_match_perfectly() {
        let c = ot_coupling(&[0.0, 1.0], &[1.0, 0.0], 1, 8).unwrap();
        assert_eq!(c.permutation, vec![1, 0]);
        assert_eq!(c.transport_cost, 0.0);
    }

    #[test]
    fn cap_is_enforced() {
        let xs = vec![0.0; 10];
        let err = ot_coupling(&xs, &xs, 1, 4).unwrap_err();
        assert!(err.to_string().contains("sub-batch"));
    }

    #[test]
    fn degenerate_batch_couples_to_zero_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x1 = x0.clone();
        couple_for_training(CouplingMode::Ot, &x0, &mut x1, 2, 20, DEFAULT_OT_CAP).unwrap();
        assert_eq!(x0, x1);
    }

    #[test]
    fn ot_never_costs_more_than_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.gen_range(1..60);
            let x0: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let x1: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let ot = ot_coupling(&x0, &x1, 2, DEFAULT_OT_CAP).unwrap();
            let ind = independent_coupling(&x0, &x1, 2).unwrap();
            assert!(ot.transport_cost <= ind.transport_cost + 1e-12);
            let mut seen = ot.permutation.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
}
