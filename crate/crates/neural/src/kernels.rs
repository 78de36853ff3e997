//! Gaussian mixture kernels and the unbiased MMD² estimator.

use instenc_core::exec::tree_sum;
use instenc_tensor::ops;
use instenc_tensor::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Mean of Gaussian kernels `exp(-‖x - y‖² / (2σ²))` over `bandwidths`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub bandwidths: Vec<f64>,
}

pub const MEDIAN_MULTIPLIERS: [f64; 3] = [0.5, 1.0, 2.0];

/// Pairwise distances used by the median heuristic come from at most this
/// many evenly spaced rows.
const MEDIAN_ROWS: usize = 512;

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>) -> Result<KernelSpec> {
        if bandwidths.is_empty() || bandwidths.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(format!("bandwidths must be positive and finite: {bandwidths:?}")));
        }
        Ok(KernelSpec { bandwidths })
    }

    pub fn gaussian(sigma: f64) -> Result<KernelSpec> {
        KernelSpec::new(vec![sigma])
    }

    /// Median pairwise distance of the pooled rows times 0.5, 1 and 2.
    pub fn median_heuristic(samples: &[&Tensor]) -> Result<KernelSpec> {
        let mut rows: Vec<&[f64]> = Vec::new();
        for t in samples {
            rows.extend((0..t.rows()).map(|i| t.row(i)));
        }
        if rows.len() > MEDIAN_ROWS {
            let step = rows.len() as f64 / MEDIAN_ROWS as f64;
            rows = (0..MEDIAN_ROWS).map(|i| rows[(i as f64 * step) as usize]).collect();
        }
        let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                d.push(rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
            }
        }
        if d.is_empty() {
            return Err(Error::TooFewSamples {
                what: "median heuristic",
                needed: 2,
                got: rows.len(),
            });
        }
        d.sort_by(f64::total_cmp);
        let med = d[d.len() / 2].sqrt();
        let med = if med > 0.0 { med } else { 1.0 };
        KernelSpec::new(MEDIAN_MULTIPLIERS.iter().map(|m| m * med).collect())
    }

    fn apply(&self, sq: f64) -> f64 {
        self.bandwidths.iter().map(|s| (-sq / (2.0 * s * s)).exp()).sum::<f64>() / self.bandwidths.len() as f64
    }

    /// Kernel matrix `[m, n]` between the rows of `a` and `b`.
    pub fn gram(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Ok(ops::sq_dist(a, b)?.map(|d| self.apply(d)))
    }

    /// Kernel matrix recorded on a tape.
    pub fn gram_var(&self, tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
        let d = tape.sq_dist(a, b)?;
        let mut acc: Option<Var> = None;
        for s in &self.bandwidths {
            let scaled = tape.scale(d, -1.0 / (2.0 * s * s))?;
            let k = tape.exp(scaled)?;
            acc = Some(match acc {
                Some(prev) => tape.add(prev, k)?,
                None => k,
            });
        }
        let sum = acc.expect("at least one bandwidth");
        Ok(tape.scale(sum, 1.0 / self.bandwidths.len() as f64)?)
    }
}

fn check_sizes(m: usize, n: usize) -> Result<()> {
    if m < 2 || n < 2 {
        return Err(Error::TooFewSamples {
            what: "unbiased MMD",
            needed: 2,
            got: m.min(n),
        });
    }
    Ok(())
}

/// Rows compared lexicographically, for a canonical argument order.
fn lex_less(a: &Tensor, b: &Tensor) -> bool {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .map_or(a.len() < b.len(), |o| o.is_lt())
}

/// Unbiased U-statistic estimate of MMD² between the row sets `a` and `b`;
/// the diagonal terms of the within-set sums are excluded. Exactly
/// symmetric in its arguments.
pub fn mmd_unbiased(a: &Tensor, b: &Tensor, kernel: &KernelSpec) -> Result<f64> {
    let (m, n) = (a.rows(), b.rows());
    check_sizes(m, n)?;
    if a.cols() != b.cols() {
        return Err(Error::InputShape {
            expected: vec![m, a.cols()],
            got: b.shape().to_vec(),
        });
    }
    let within = |t: &Tensor| -> Result<f64> {
        let g = kernel.gram(t, t)?;
        let r = t.rows();
        // the diagonal is exactly 1 because self-distances are exactly 0
        Ok((tree_sum(g.data()) - r as f64) / (r * (r - 1)) as f64)
    };
    let (first, second) = if lex_less(b, a) { (b, a) } else { (a, b) };
    let cross = tree_sum(kernel.gram(first, second)?.data()) / (m * n) as f64;
    Ok(within(a)? + within(b)? - 2.0 * cross)
}

/// [`mmd_unbiased`] recorded on a tape, differentiable in both sets.
pub fn mmd_unbiased_var(tape: &mut Tape, a: Var, b: Var, kernel: &KernelSpec) -> Result<Var> {
    let (m, n) = (tape.value(a).rows(), tape.value(b).rows());
    check_sizes(m, n)?;
    let within = |tape: &mut Tape, t: Var, r: usize| -> Result<Var> {
        let g = kernel.gram_var(tape, t, t)?;
        let s = tape.sum(g)?;
        let s = tape.add_scalar(s, -(r as f64))?;
        Ok(tape.scale(s, 1.0 / (r * (r - 1)) as f64)?)
    };
    let aa = within(tape, a, m)?;
    let bb = within(tape, b, n)?;
    let ab = kernel.gram_var(tape, a, b)?;
    let ab = tape.sum(ab)?;
    let ab = tape.scale(ab, -2.0 / (m * n) as f64)?;
    let s = tape.add(aa, bb)?;
    Ok(tape.add(s, ab)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use instenc_tensor::{seeded_init, Init};

    #[test]
    fn symmetric_and_matches_tape() {
        let a = seeded_init(&[7, 3], Init::Gaussian { mean: 0.0, std: 1.0 }, 1).unwrap();
        let b = seeded_init(&[5, 3], Init::Gaussian { mean: 0.5, std: 1.0 }, 2).unwrap();
        let k = KernelSpec::new(vec![0.7, 1.5]).unwrap();
        let ab = mmd_unbiased(&a, &b, &k).unwrap();
        assert_eq!(ab, mmd_unbiased(&b, &a, &k).unwrap());
        let mut tape = Tape::new();
        let (va, vb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
        let v = mmd_unbiased_var(&mut tape, va, vb, &k).unwrap();
        assert!((tape.value(v).item().unwrap() - ab).abs() < 1e-12);
    }

    #[test]
    fn identical_sets_are_not_positive() {
        let a = seeded_init(&[9, 2], Init::Gaussian { mean: 0.0, std: 1.0 }, 3).unwrap();
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert!(mmd_unbiased(&a, &a, &k).unwrap() <= 0.0);
    }

    #[test]
    fn rejects_small_sets_and_bad_bandwidths() {
        let a = Tensor::zeros(&[1, 2]);
        let b = Tensor::zeros(&[4, 2]);
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert!(mmd_unbiased(&a, &b, &k).is_err());
        assert!(KernelSpec::new(vec![]).is_err());
        assert!(KernelSpec::new(vec![0.0]).is_err());
    }

    #[test]
    fn median_heuristic_scales() {
        let a = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        // distances 1, 2, 3: median 2
        let k = KernelSpec::median_heuristic(&[&a]).unwrap();
        assert_eq!(k.bandwidths, vec![1.0, 2.0, 4.0]);
    }
}
