use instenc_tensor::ops::{self, PatchGrid};
use instenc_tensor::{seeded_init, Init, Tensor};
use proptest::prelude::*;

fn gauss(shape: &[usize], seed: u64) -> Tensor {
    seeded_init(shape, Init::Gaussian { mean: 0.0, std: 1.0 }, seed).unwrap()
}

proptest! {
    #[test]
    fn patches_roundtrip(n in 1usize..4, c in 1usize..3, gh in 1usize..4, gw in 1usize..4, p in 1usize..4, seed in any::<u64>()) {
        let x = gauss(&[n, c, gh * p, gw * p], seed);
        let g = PatchGrid::of(&x, p).unwrap();
        prop_assert_eq!(ops::unpatch(&ops::patches(&x, p).unwrap(), g).unwrap(), x);
    }

    #[test]
    fn matmul_transpose_identity(m in 1usize..8, k in 1usize..8, n in 1usize..8, seed in any::<u64>()) {
        let a = gauss(&[m, k], seed);
        let b = gauss(&[k, n], seed ^ 1);
        let ab = ops::matmul(&a, &b).unwrap();
        let bt_at = ops::matmul(&ops::transpose(&b).unwrap(), &ops::transpose(&a).unwrap()).unwrap();
        let t = ops::transpose(&bt_at).unwrap();
        for (x, y) in ab.data().iter().zip(t.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let nt = ops::matmul_nt(&a, &ops::transpose(&b).unwrap()).unwrap();
        let tn = ops::matmul_tn(&ops::transpose(&a).unwrap(), &b).unwrap();
        for ((x, y), z) in ab.data().iter().zip(nt.data()).zip(tn.data()) {
            prop_assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn raw_format_roundtrip(dims in proptest::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
        let t = gauss(&dims, seed);
        let mut buf = Vec::new();
        t.write_raw(&mut buf).unwrap();
        prop_assert_eq!(Tensor::read_raw(&buf[..]).unwrap(), t);
    }
}
