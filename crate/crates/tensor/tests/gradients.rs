//! Every differentiable primitive against central finite differences.

use instenc_tensor::gradcheck::check_gradients;
use instenc_tensor::{ops, seeded_init, Init, Result, Tape, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;
const INSTANCES: u64 = 10;

fn gauss(shape: &[usize], seed: u64) -> Tensor {
    seeded_init(shape, Init::Gaussian { mean: 0.0, std: 1.0 }, seed).unwrap()
}

/// Weighted sum so every output entry gets a distinct upstream gradient.
fn reduce(t: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let w = t.leaf(gauss(t.value(v).shape(), seed ^ 0xabc));
    let p = t.mul(v, w)?;
    t.sum(p)
}

fn check(name: &str, shapes: &[&[usize]], f: impl Fn(&mut Tape, &[Var], u64) -> Result<Var>) {
    for seed in 0..INSTANCES {
        let inputs: Vec<Tensor> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| gauss(s, seed * 31 + i as u64))
            .collect();
        let r = check_gradients(&inputs, H, |t, v| f(t, v, seed)).unwrap();
        assert!(r.max_rel_error() < TOL, "{name} seed {seed}: {:?}", r.per_input);
    }
}

#[test]
fn matmul_and_transpose() {
    check("matmul", &[&[3, 4], &[4, 5]], |t, v, s| {
        let y = t.matmul(v[0], v[1])?;
        reduce(t, y, s)
    });
    check("transpose", &[&[3, 4]], |t, v, s| {
        let y = t.transpose(v[0])?;
        reduce(t, y, s)
    });
}

#[test]
fn elementwise() {
    check("add", &[&[2, 3], &[2, 3]], |t, v, s| {
        let y = t.add(v[0], v[1])?;
        reduce(t, y, s)
    });
    check("sub", &[&[2, 3], &[2, 3]], |t, v, s| {
        let y = t.sub(v[0], v[1])?;
        reduce(t, y, s)
    });
    check("mul", &[&[2, 3], &[2, 3]], |t, v, s| {
        let y = t.mul(v[0], v[1])?;
        reduce(t, y, s)
    });
    check("scale", &[&[4]], |t, v, s| {
        let y = t.scale(v[0], -1.7)?;
        let y = t.add_scalar(y, 0.3)?;
        reduce(t, y, s)
    });
}

#[test]
fn broadcasting() {
    check("add_tiled", &[&[6, 3], &[2, 3]], |t, v, s| {
        let y = t.add_tiled(v[0], v[1])?;
        reduce(t, y, s)
    });
    check("mul_tiled", &[&[6, 3], &[3]], |t, v, s| {
        let y = t.mul_tiled(v[0], v[1])?;
        reduce(t, y, s)
    });
    check("mul_col", &[&[4, 3], &[4, 1]], |t, v, s| {
        let y = t.mul_col(v[0], v[1])?;
        reduce(t, y, s)
    });
}

#[test]
fn nonlinearities() {
    // gaussian inputs hit the relu kink with probability 0
    check("relu", &[&[5, 4]], |t, v, s| {
        let y = t.relu(v[0])?;
        reduce(t, y, s)
    });
    check("tanh", &[&[5, 4]], |t, v, s| {
        let y = t.tanh(v[0])?;
        reduce(t, y, s)
    });
    check("sigmoid", &[&[5, 4]], |t, v, s| {
        let y = t.sigmoid(v[0])?;
        reduce(t, y, s)
    });
    check("softplus", &[&[5, 4]], |t, v, s| {
        let y = t.softplus(v[0])?;
        reduce(t, y, s)
    });
    check("exp", &[&[5, 4]], |t, v, s| {
        let y = t.exp(v[0])?;
        reduce(t, y, s)
    });
}

#[test]
fn reductions_and_pooling() {
    check("mean", &[&[3, 3]], |t, v, _| {
        let y = t.mul(v[0], v[0])?;
        t.mean(y)
    });
    check("group_mean", &[&[6, 2]], |t, v, s| {
        let y = t.group_mean(v[0], 3)?;
        reduce(t, y, s)
    });
    check("group_softmax", &[&[6, 1]], |t, v, s| {
        let y = t.group_softmax(v[0], 3)?;
        reduce(t, y, s)
    });
    check("select_rows", &[&[4, 2]], |t, v, s| {
        let y = t.select_rows(v[0], &[3, 0, 3])?;
        reduce(t, y, s)
    });
    check("reshape", &[&[2, 6]], |t, v, s| {
        let y = t.reshape(v[0], &[3, 4])?;
        reduce(t, y, s)
    });
}

#[test]
fn convolution_and_layout() {
    check("conv_nonoverlap", &[&[2, 2, 4, 4], &[3, 2, 2, 2]], |t, v, s| {
        let y = t.conv_nonoverlap(v[0], v[1])?;
        reduce(t, y, s)
    });
    check("conv_nonoverlap 3d", &[&[1, 4, 4], &[2, 1, 2, 2]], |t, v, s| {
        let y = t.conv_nonoverlap(v[0], v[1])?;
        reduce(t, y, s)
    });
    check("patches", &[&[2, 1, 4, 4]], |t, v, s| {
        let y = t.patches(v[0], 2)?;
        reduce(t, y, s)
    });
    check("channels_last", &[&[2, 3, 2, 2]], |t, v, s| {
        let y = t.channels_last(v[0])?;
        reduce(t, y, s)
    });
}

#[test]
fn batch_normalization() {
    check("batch_normalize", &[&[6, 3]], |t, v, s| {
        let y = t.batch_normalize(v[0], 1e-5)?;
        reduce(t, y, s)
    });
}

#[test]
fn squared_distances() {
    check("sq_dist", &[&[4, 3], &[5, 3]], |t, v, s| {
        let y = t.sq_dist(v[0], v[1])?;
        reduce(t, y, s)
    });
    check("sq_dist self", &[&[4, 3]], |t, v, s| {
        let y = t.sq_dist(v[0], v[0])?;
        reduce(t, y, s)
    });
}

/// The patch convolution is a block-diagonal linear map on the
/// patch-flattened input.
#[test]
fn conv_equals_block_diagonal_matrix() {
    let (n, c, hgt, p, k) = (2, 2, 4, 2, 3);
    let x = gauss(&[n, c, hgt, hgt], 1);
    let w = gauss(&[k, c, p, p], 2);
    let y = ops::conv_nonoverlap(&x, &w).unwrap();

    let rows = ops::patches(&x, p).unwrap();
    let (np, len) = (rows.shape()[0], rows.shape()[1]);
    let flat: Vec<f64> = rows.data().to_vec();
    // materialize a (np*k) x (np*len) block-diagonal matrix
    let mut m = vec![0.0; np * k * np * len];
    for b in 0..np {
        for kk in 0..k {
            for j in 0..len {
                m[(b * k + kk) * (np * len) + b * len + j] = w.data()[kk * len + j];
            }
        }
    }
    let out: Vec<f64> = (0..np * k)
        .map(|r| (0..np * len).map(|j| m[r * np * len + j] * flat[j]).sum())
        .collect();
    let via_matrix = Tensor::new(vec![np, k], out).unwrap();
    let y_rows = ops::channels_last(&y).unwrap();
    for (a, b) in y_rows.data().iter().zip(via_matrix.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn parallel_and_sequential_agree() {
    let a = gauss(&[300, 40], 3);
    let b = gauss(&[200, 40], 4);
    let par = ops::sq_dist(&a, &b).unwrap();
    let seq = instenc_core::exec::sequential(|| ops::sq_dist(&a, &b).unwrap());
    assert_eq!(par, seq);
    let x = gauss(&[16, 1, 16, 16], 5);
    let w = gauss(&[32, 1, 4, 4], 6);
    let par = ops::conv_nonoverlap(&x, &w).unwrap();
    let seq = instenc_core::exec::sequential(|| ops::conv_nonoverlap(&x, &w).unwrap());
    assert_eq!(par, seq);
}
