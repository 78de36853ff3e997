//! Minimum-cost assignment and alignment of shuffled patch sets.

use instenc_core::exec::{self, tree_sum};
use instenc_tensor::{ops, Tensor};

use crate::{Error, Result};

/// Minimum-cost perfect assignment for a square `n × n` row-major cost
/// matrix: `result[row] = column`. Shortest augmenting paths with
/// potentials, O(n³).
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    // 1-based arrays, index 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            result[owner[j] - 1] = j - 1;
        }
    }
    result
}

/// Rows of `target` reordered to best match the rows of `reference` in
/// squared distance.
pub fn align_to(reference: &Tensor, target: &Tensor) -> Result<Tensor> {
    if reference.shape() != target.shape() || reference.rank() != 2 {
        return Err(Error::InputShape {
            expected: reference.shape().to_vec(),
            got: target.shape().to_vec(),
        });
    }
    let d = ops::sq_dist(reference, target)?;
    let perm = min_cost_assignment(d.data(), reference.rows());
    Ok(target.select_rows(&perm))
}

/// Mean squared error between per-sample row sets after aligning each
/// sample's rows by minimum-cost matching, averaged over samples, rows and
/// features.
pub fn aligned_mse(estimated: &[Tensor], truth: &[Tensor]) -> Result<f64> {
    if estimated.is_empty() || estimated.len() != truth.len() {
        return Err(Error::TooFewSamples {
            what: "aligned MSE",
            needed: truth.len().max(1),
            got: estimated.len(),
        });
    }
    let per_sample: Vec<Result<f64>> = exec::map_range(truth.len(), |i| {
        let aligned = align_to(&truth[i], &estimated[i])?;
        Ok(tree_sum(ops::sub(&aligned, &truth[i])?.map(|x| x * x).data()))
    });
    let sums = per_sample.into_iter().collect::<Result<Vec<f64>>>()?;
    let count: usize = truth.iter().map(Tensor::len).sum();
    Ok(tree_sum(&sums) / count as f64)
}

/// MSE of the estimate divided by the MSE of predicting every row as the
/// mean row of `truth`.
pub fn normalized_mse_sets(estimated: &[Tensor], truth: &[Tensor]) -> Result<f64> {
    let mse = aligned_mse(estimated, truth)?;
    let all = crate::encoders::stack_samples(truth)?;
    let (mean, _) = ops::column_stats(&all);
    let k = all.cols();
    let mut dev = Vec::with_capacity(all.len());
    for row in all.data().chunks(k) {
        dev.extend(row.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)));
    }
    let baseline = tree_sum(&dev) / all.len() as f64;
    if baseline == 0.0 {
        return Err(Error::Config("encoded held-out rows are constant".into()));
    }
    Ok(mse / baseline)
}
