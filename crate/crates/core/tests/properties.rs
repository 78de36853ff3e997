//! Score identities checked against naive re-implementations.

use std::collections::BTreeMap;

use instenc_core::families::{compose_families, random_family, EncoderFamily};
use instenc_core::scores::{
    decompose_privacy_score, kl_gap, privacy_given_inner, mismatched_privacy_score, pos_set_with_labels, privacy_score,
    Budget, FixedQ, MismatchedDistribution, PosteriorQ,
};
use instenc_core::{exec, rng, Observation, Universe};
use proptest::prelude::*;
use rand::Rng;

fn random_universe(size: usize, seed: u64) -> Universe {
    let mut r = rng::rng(seed);
    let labels: Vec<usize> = (0..size).map(|_| r.random_range(0..2)).collect();
    Universe::from_labels(&labels, 2).unwrap()
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

/// Observation -> list of (encoder, mass) by direct summation.
fn naive_groups(f: &EncoderFamily, labels: &[usize], n: usize) -> BTreeMap<Vec<(u32, usize)>, Vec<(usize, f64)>> {
    let subs = subsets(labels.len(), n);
    let mut groups: BTreeMap<_, Vec<(usize, f64)>> = BTreeMap::new();
    for (t, enc) in f.encoders().iter().enumerate() {
        for s in &subs {
            let mut o: Vec<(u32, usize)> = s.iter().map(|&x| (enc.apply(x), labels[x])).collect();
            o.sort();
            groups.entry(o).or_default().push((t, f.weights()[t] / subs.len() as f64));
        }
    }
    groups
}

fn naive_privacy(f: &EncoderFamily, labels: &[usize], n: usize) -> f64 {
    naive_groups(f, labels, n)
        .values()
        .map(|g| {
            let total: f64 = g.iter().map(|x| x.1).sum();
            let h: f64 = g.iter().map(|x| -(x.1 / total) * (x.1 / total).log2()).sum();
            total * h
        })
        .sum()
}

fn naive_expected_kl(f: &EncoderFamily, labels: &[usize], n: usize, q: &[f64]) -> f64 {
    naive_groups(f, labels, n)
        .values()
        .map(|g| {
            let total: f64 = g.iter().map(|x| x.1).sum();
            total * g.iter().map(|&(t, m)| (m / total) * ((m / total) / q[t]).log2()).sum::<f64>()
        })
        .sum()
}

fn random_q(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::rng(seed);
    let raw: Vec<f64> = (0..len).map(|_| r.random::<f64>() + 0.01).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn privacy_matches_naive_and_bounds(size in 2usize..7, fam in 1usize..9, n in 0usize..4, seed in any::<u64>()) {
        let u = random_universe(size, seed);
        let f = random_family(size, size, fam, seed ^ 1).unwrap();
        let n = n.min(size);
        let s = privacy_score(&f, &u, n, None, Budget::default()).unwrap();
        s.check().unwrap();
        prop_assert!((s.score_bits - naive_privacy(&f, u.labels(), n)).abs() < 1e-10);
        prop_assert!(s.score_bits >= 0.0);
        prop_assert!(s.score_bits <= (f.len() as f64).log2() + 1e-12);
        let probs: f64 = s.per_observation.iter().map(|t| t.probability).sum();
        prop_assert!((probs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn composition_never_lowers_inner_privacy(size in 2usize..7, a in 1usize..9, b in 1usize..9, n in 1usize..3, seed in any::<u64>()) {
        let u = random_universe(size, seed);
        let f = random_family(size, size, a, seed ^ 2).unwrap();
        let g = random_family(size, size + 2, b, seed ^ 3).unwrap();
        let c = compose_families(&f, &g).unwrap();
        let score = |fam: &EncoderFamily| privacy_score(fam, &u, n, None, Budget::default()).unwrap().score_bits;
        prop_assert!(score(&c) >= score(&f) - 1e-9);
        let given = privacy_given_inner(&f, &g, &u, n, Budget::default()).unwrap();
        prop_assert!(score(&c) >= given - 1e-9);
    }

    #[test]
    fn decomposition_sums_to_privacy(size in 2usize..7, fam in 1usize..9, n in 0usize..4, seed in any::<u64>()) {
        let u = random_universe(size, seed);
        let f = random_family(size, size + 1, fam, seed ^ 4).unwrap();
        let n = n.min(size);
        let d = decompose_privacy_score(&f, &u, n, Budget::default()).unwrap();
        let s = privacy_score(&f, &u, n, None, Budget::default()).unwrap().score_bits;
        prop_assert!((d.total() - s).abs() < 1e-10);
        prop_assert!(d.h_data >= 0.0 && d.h_key_given_data >= 0.0);
    }

    #[test]
    fn kl_gap_matches_direct_sum(size in 2usize..7, fam in 1usize..9, n in 0usize..4, seed in any::<u64>()) {
        let u = random_universe(size, seed);
        let f = random_family(size, size, fam, seed ^ 5).unwrap();
        let n = n.min(size);
        let q = random_q(f.len(), seed ^ 6);
        let model = FixedQ(MismatchedDistribution::new(q.clone()).unwrap());
        let gap = kl_gap(&f, &u, n, &model, Budget::default()).unwrap();
        prop_assert!((gap - naive_expected_kl(&f, u.labels(), n, &q)).abs() < 1e-10);
        prop_assert!(gap >= -1e-12);
        let s = privacy_score(&f, &u, n, None, Budget::default()).unwrap().score_bits;
        let m = mismatched_privacy_score(&f, &u, n, &model, Budget::default()).unwrap().score_bits;
        prop_assert!(m >= s - 1e-12);
        prop_assert_eq!(kl_gap(&f, &u, n, &PosteriorQ, Budget::default()).unwrap(), 0.0);
    }

    /// Knowing the outer encoder, the posterior over composites equals the
    /// inner posterior given the de-encoded observation.
    #[test]
    fn composite_posterior_given_outer(size in 2usize..6, a in 1usize..7, b in 1usize..5, seed in any::<u64>()) {
        let u = random_universe(size, seed);
        let f = random_family(size, size, a, seed ^ 7).unwrap();
        let g = random_family(size, size, b, seed ^ 8).unwrap();
        let mut r = rng::rng(seed ^ 9);
        let n = r.random_range(0..=size);
        let xs = &subsets(size, n)[0];
        let (ti, to) = (r.random_range(0..f.len()), r.random_range(0..g.len()));
        let composite = f.encoder(ti).then(g.encoder(to)).unwrap();
        let observed = Observation::new(xs.iter().map(|&x| (composite.apply(x), u.labels()[x])).collect());

        // posterior over inner T given (O, T'): composites T'∘T consistent with O
        let mut joint: Vec<f64> = vec![0.0; f.len()];
        for (i, inner) in f.encoders().iter().enumerate() {
            let c = inner.then(g.encoder(to)).unwrap();
            let single = EncoderFamily::singleton(c);
            if !pos_set_with_labels(&single, &observed, u.labels()).is_empty() {
                joint[i] = f.weights()[i];
            }
        }
        let total: f64 = joint.iter().sum();
        let outer = g.encoder(to);
        let decoded = Observation::new(
            observed
                .pairs()
                .iter()
                .map(|&(z, y)| (outer.mapping().iter().position(|&s| s == z).unwrap() as u32, y))
                .collect(),
        );
        let inner_pos = pos_set_with_labels(&f, &decoded, u.labels());
        let inner_total: f64 = inner_pos.iter().map(|&i| f.weights()[i]).sum();
        for i in 0..f.len() {
            let want = if inner_pos.contains(&i) { f.weights()[i] / inner_total } else { 0.0 };
            prop_assert!((joint[i] / total - want).abs() < 1e-12);
        }
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let u = random_universe(6, 11);
    let f = random_family(6, 7, 8, 12).unwrap();
    let g = random_family(7, 7, 6, 13).unwrap();
    let c = compose_families(&f, &g).unwrap();
    let par = privacy_score(&c, &u, 3, None, Budget::default()).unwrap();
    let seq = exec::sequential(|| privacy_score(&c, &u, 3, None, Budget::default()).unwrap());
    assert_eq!(par, seq);
    for threads in [1, 2, 5] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let other = pool.install(|| privacy_score(&c, &u, 3, None, Budget::default()).unwrap());
        assert_eq!(serde_json::to_string(&par).unwrap(), serde_json::to_string(&other).unwrap());
    }
}
