//! The unbiased MMD² estimator against closed forms and its own sampling
//! distribution.

use instenc_neural::kernels::{mmd_unbiased, KernelSpec};
use instenc_tensor::{seeded_init, Init, Tensor};
use nalgebra::DMatrix;

fn normal(n: usize, d: usize, mean: f64, seed: u64) -> Tensor {
    seeded_init(&[n, d], Init::Gaussian { mean, std: 1.0 }, seed).unwrap()
}

#[test]
fn same_distribution_is_centred_on_zero() {
    let k = KernelSpec::gaussian(1.0).unwrap();
    let est: Vec<f64> = (0..100)
        .map(|t| mmd_unbiased(&normal(500, 1, 0.0, 2 * t), &normal(500, 1, 0.0, 2 * t + 1), &k).unwrap())
        .collect();
    let mean = est.iter().sum::<f64>() / 100.0;
    let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
    assert!(mean.abs() <= 3.0 * sd / 10.0, "mean {mean}, sd {sd}");
}

#[test]
fn separated_gaussians_match_closed_form() {
    // x - x' ~ N(0, 2) within a set and N(5, 2) across, so with σ = 1
    // E k = 1/√3 and e^{-25/6}/√3, and MMD² = 2(1 - e^{-25/6})/√3.
    let closed = 2.0 * (1.0 - (-25.0f64 / 6.0).exp()) / 3f64.sqrt();
    let k = KernelSpec::gaussian(1.0).unwrap();
    let est = mmd_unbiased(&normal(500, 1, 0.0, 1), &normal(500, 1, 5.0, 2), &k).unwrap();
    assert!(est > 0.5);
    assert!((est - closed).abs() < 0.05, "{est} vs {closed}");
}

#[test]
fn mixture_kernel_is_positive_semidefinite() {
    let k = KernelSpec::new(vec![0.3, 1.0, 4.0]).unwrap();
    for seed in 0..5 {
        let x = normal(40, 3, 0.0, seed);
        let g = k.gram(&x, &x).unwrap();
        let m = DMatrix::from_row_slice(40, 40, g.data());
        let min = m.symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-10, "seed {seed}: {min}");
    }
}

#[test]
fn permutation_null_brackets_the_estimate() {
    // Under the null, relabelling the pooled sample leaves the estimator's
    // distribution unchanged, so the observed value sits inside it.
    let k = KernelSpec::gaussian(1.0).unwrap();
    let a = normal(60, 2, 0.0, 5);
    let b = normal(60, 2, 0.0, 6);
    let observed = mmd_unbiased(&a, &b, &k).unwrap();
    let pooled: Vec<usize> = (0..120).collect();
    let all = Tensor::new(vec![120, 2], a.data().iter().chain(b.data()).copied().collect()).unwrap();
    let mut above = 0;
    for t in 0..200u64 {
        let mut idx = pooled.clone();
        let mut r = instenc_core::rng::rng(t);
        rand::seq::SliceRandom::shuffle(&mut idx[..], &mut r);
        let v = mmd_unbiased(&all.select_rows(&idx[..60]), &all.select_rows(&idx[60..]), &k).unwrap();
        if v >= observed {
            above += 1;
        }
    }
    assert!((10..=190).contains(&above), "{above} of 200 permutations above");
}
