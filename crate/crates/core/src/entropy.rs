//! Base-2 information measures with `0 log 0 = 0`.

use crate::exec::tree_sum;

/// Shannon entropy in bits of a (not necessarily normalized) mass vector.
pub fn entropy_bits(masses: &[f64]) -> f64 {
    let total = tree_sum(masses);
    if total <= 0.0 {
        return 0.0;
    }
    let terms: Vec<f64> = masses
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let p = m / total;
            -p * p.log2()
        })
        .collect();
    tree_sum(&terms).max(0.0)
}

/// Cross-entropy `-sum p log q` in bits. Returns `None` when `q` is zero
/// somewhere `p` is positive.
pub fn cross_entropy_bits(p: &[f64], q: &[f64]) -> Option<f64> {
    debug_assert_eq!(p.len(), q.len());
    let mut terms = Vec::with_capacity(p.len());
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return None;
            }
            terms.push(-pi * qi.log2());
        }
    }
    Some(tree_sum(&terms))
}

/// KL divergence `D(p || q)` in bits, computed term by term as
/// `sum p log(p / q)`.
pub fn kl_bits(p: &[f64], q: &[f64]) -> Option<f64> {
    let mut terms = Vec::with_capacity(p.len());
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return None;
            }
            terms.push(pi * (pi / qi).log2());
        }
    }
    Some(tree_sum(&terms))
}
