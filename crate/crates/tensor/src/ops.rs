//! Forward kernels. All functions are pure; the tape records them and
//! supplies the matching backward passes.

use instenc_core::exec;

use crate::{Error, Result, Tensor};

/// Below this many multiply-adds a kernel runs on the calling thread.
const PARALLEL_WORK: usize = 1 << 15;

/// Builds a `[rows, cols]` buffer row by row, fanning out over row blocks
/// for large jobs. Every row is computed by the same code either way.
pub(crate) fn fill_rows(rows: usize, cols: usize, work_per_row: usize, f: impl Fn(usize, &mut [f64]) + Sync) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    if rows * work_per_row.max(1) < PARALLEL_WORK || rows < 2 || !exec::is_parallel() {
        for (i, row) in out.chunks_mut(cols.max(1)).enumerate().take(rows) {
            f(i, row);
        }
        return out;
    }
    let block = (PARALLEL_WORK / work_per_row.max(1)).clamp(1, rows);
    let blocks = rows.div_ceil(block);
    let parts = exec::map_range(blocks, |b| {
        let start = b * block;
        let end = (start + block).min(rows);
        let mut buf = vec![0.0; (end - start) * cols];
        for (k, row) in buf.chunks_mut(cols.max(1)).enumerate() {
            f(start + k, row);
        }
        buf
    });
    for (b, part) in parts.into_iter().enumerate() {
        let start = b * block * cols;
        out[start..start + part.len()].copy_from_slice(&part);
    }
    out
}

fn check_2d(op: &'static str, a: &Tensor) -> Result<(usize, usize)> {
    if a.rank() != 2 {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: vec![],
        });
    }
    Ok((a.shape()[0], a.shape()[1]))
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// `a · b` for `[m,k] x [k,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = check_2d("matmul", a)?;
    let (k2, n) = check_2d("matmul", b)?;
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let (ad, bd) = (a.data(), b.data());
    let data = fill_rows(m, n, k * n, |i, row| {
        for (p, &x) in ad[i * k..(i + 1) * k].iter().enumerate() {
            if x != 0.0 {
                for (o, &y) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
    });
    Tensor::new(vec![m, n], data)
}

/// `aᵀ · b` for `[k,m] x [k,n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = check_2d("matmul_tn", a)?;
    let (k2, n) = check_2d("matmul_tn", b)?;
    if k != k2 {
        return Err(mismatch("matmul_tn", a, b));
    }
    let (ad, bd) = (a.data(), b.data());
    let data = fill_rows(m, n, k * n, |i, row| {
        for p in 0..k {
            let x = ad[p * m + i];
            if x != 0.0 {
                for (o, &y) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
    });
    Tensor::new(vec![m, n], data)
}

/// `a · bᵀ` for `[m,k] x [n,k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = check_2d("matmul_nt", a)?;
    let (n, k2) = check_2d("matmul_nt", b)?;
    if k != k2 {
        return Err(mismatch("matmul_nt", a, b));
    }
    let (ad, bd) = (a.data(), b.data());
    let data = fill_rows(m, n, k * n, |i, row| {
        let ai = &ad[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            *o = ai.iter().zip(&bd[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum();
        }
    });
    Tensor::new(vec![m, n], data)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = check_2d("transpose", a)?;
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

pub fn zip_same(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same("mul", a, b, |x, y| x * y)
}

/// Checks that `b`'s rows tile `a`'s rows: `a` is `[R, C]`, `b` is `[r, C]`
/// or `[C]` with `r | R`. Returns `(R, C, r)`.
pub(crate) fn tiling(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let (rows, cols) = (a.rows(), a.cols());
    let (br, bc) = if b.rank() == 1 { (1, b.len()) } else { (b.rows(), b.cols()) };
    if a.rank() < 2 || bc != cols || br == 0 || rows % br != 0 {
        return Err(mismatch(op, a, b));
    }
    Ok((rows, cols, br))
}

/// `a[i] + b[i mod r]` row-wise: bias rows and positional embeddings.
pub fn add_tiled(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (_, cols, br) = tiling("add_tiled", a, b)?;
    let bd = b.data();
    let mut out = a.clone();
    for (i, row) in out.data_mut().chunks_mut(cols).enumerate() {
        let brow = &bd[(i % br) * cols..(i % br + 1) * cols];
        for (o, &y) in row.iter_mut().zip(brow) {
            *o += y;
        }
    }
    Ok(out)
}

pub fn mul_tiled(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (_, cols, br) = tiling("mul_tiled", a, b)?;
    let bd = b.data();
    let mut out = a.clone();
    for (i, row) in out.data_mut().chunks_mut(cols).enumerate() {
        let brow = &bd[(i % br) * cols..(i % br + 1) * cols];
        for (o, &y) in row.iter_mut().zip(brow) {
            *o *= y;
        }
    }
    Ok(out)
}

/// Scales row `i` of `a` by `w[i]`.
pub fn mul_col(a: &Tensor, w: &Tensor) -> Result<Tensor> {
    if a.rank() < 2 || w.len() != a.rows() {
        return Err(mismatch("mul_col", a, w));
    }
    let cols = a.cols();
    let mut out = a.clone();
    for (row, &s) in out.data_mut().chunks_mut(cols).zip(w.data()) {
        for o in row {
            *o *= s;
        }
    }
    Ok(out)
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Means over consecutive groups of `group` rows: `[G·group, C] -> [G, C]`.
pub fn group_mean(a: &Tensor, group: usize) -> Result<Tensor> {
    let (rows, cols) = (a.rows(), a.cols());
    if a.rank() < 2 || group == 0 || rows % group != 0 {
        return Err(Error::Shape {
            op: "group_mean",
            left: a.shape().to_vec(),
            right: vec![group],
        });
    }
    let g = rows / group;
    let mut out = vec![0.0; g * cols];
    for (i, row) in a.data().chunks(cols).enumerate() {
        for (o, &x) in out[(i / group) * cols..(i / group + 1) * cols].iter_mut().zip(row) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= group as f64;
    }
    Tensor::new(vec![g, cols], out)
}

/// Softmax within consecutive groups of `group` entries of a column vector.
pub fn group_softmax(a: &Tensor, group: usize) -> Result<Tensor> {
    if group == 0 || a.len() % group != 0 || a.cols() != 1 {
        return Err(Error::Shape {
            op: "group_softmax",
            left: a.shape().to_vec(),
            right: vec![group],
        });
    }
    let mut out = a.clone();
    for chunk in out.data_mut().chunks_mut(group) {
        let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in chunk.iter_mut() {
            *v = (*v - max).exp();
        }
        let total: f64 = chunk.iter().sum();
        for v in chunk.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Spatial geometry of a non-overlapping patch grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

impl PatchGrid {
    pub fn of(x: &Tensor, patch: usize) -> Result<PatchGrid> {
        let s = x.shape();
        let (batch, channels, height, width) = match *s {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => {
                return Err(Error::Shape {
                    op: "patch grid",
                    left: s.to_vec(),
                    right: vec![],
                })
            }
        };
        if patch == 0 || height % patch != 0 || width % patch != 0 {
            return Err(Error::NotDivisible { patch, height, width });
        }
        Ok(PatchGrid {
            batch,
            channels,
            height,
            width,
            patch,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.height / self.patch
    }

    pub fn grid_w(&self) -> usize {
        self.width / self.patch
    }

    pub fn patches_per_image(&self) -> usize {
        self.grid_h() * self.grid_w()
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    /// Flat input offset of entry `(c, i, j)` of patch `q` of image `n`.
    fn offset(&self, n: usize, q: usize, c: usize, i: usize, j: usize) -> usize {
        let (gy, gx) = (q / self.grid_w(), q % self.grid_w());
        ((n * self.channels + c) * self.height + gy * self.patch + i) * self.width + gx * self.patch + j
    }
}

/// Rows of flattened patches: `[N,C,H,W] -> [N·P, C·p·p]`, patches in raster
/// order, entries ordered `(c, i, j)`.
pub fn patches(x: &Tensor, patch: usize) -> Result<Tensor> {
    let g = PatchGrid::of(x, patch)?;
    let (pp, len) = (g.patches_per_image(), g.patch_len());
    let xd = x.data();
    let mut out = Vec::with_capacity(g.batch * pp * len);
    for n in 0..g.batch {
        for q in 0..pp {
            for c in 0..g.channels {
                for i in 0..patch {
                    let start = g.offset(n, q, c, i, 0);
                    out.extend_from_slice(&xd[start..start + patch]);
                }
            }
        }
    }
    Tensor::new(vec![g.batch * pp, len], out)
}

/// Inverse of [`patches`]: scatters patch rows back into image layout.
pub fn unpatch(rows: &Tensor, g: PatchGrid) -> Result<Tensor> {
    let (pp, len, patch) = (g.patches_per_image(), g.patch_len(), g.patch);
    if rows.shape() != [g.batch * pp, len] {
        return Err(Error::Shape {
            op: "unpatch",
            left: rows.shape().to_vec(),
            right: vec![g.batch * pp, len],
        });
    }
    let mut out = vec![0.0; g.batch * g.channels * g.height * g.width];
    let rd = rows.data();
    for n in 0..g.batch {
        for q in 0..pp {
            let row = &rd[(n * pp + q) * len..(n * pp + q + 1) * len];
            for c in 0..g.channels {
                for i in 0..patch {
                    let start = g.offset(n, q, c, i, 0);
                    out[start..start + patch].copy_from_slice(&row[(c * patch + i) * patch..(c * patch + i + 1) * patch]);
                }
            }
        }
    }
    Tensor::new(vec![g.batch, g.channels, g.height, g.width], out)
}

/// Convolution with stride equal to the kernel size:
/// `[N,C,H,W] x [K,C,p,p] -> [N,K,H/p,W/p]` (a 3-d input gives a 3-d output).
pub fn conv_nonoverlap(x: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let ks = kernels.shape();
    if ks.len() != 4 || ks[2] != ks[3] {
        return Err(mismatch("conv_nonoverlap", x, kernels));
    }
    let (k, p) = (ks[0], ks[2]);
    let g = PatchGrid::of(x, p)?;
    if ks[1] != g.channels {
        return Err(mismatch("conv_nonoverlap", x, kernels));
    }
    let (pp, len) = (g.patches_per_image(), g.patch_len());
    let (xd, kd) = (x.data(), kernels.data());
    // one output row per (n, kernel), holding all patch positions
    let data = fill_rows(g.batch * k, pp, pp * len, |r, row| {
        let (n, kk) = (r / k, r % k);
        let w = &kd[kk * len..(kk + 1) * len];
        for (q, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..g.channels {
                for i in 0..p {
                    let start = g.offset(n, q, c, i, 0);
                    let wrow = &w[(c * p + i) * p..(c * p + i + 1) * p];
                    acc += xd[start..start + p].iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            *o = acc;
        }
    });
    let shape = if x.rank() == 3 {
        vec![k, g.grid_h(), g.grid_w()]
    } else {
        vec![g.batch, k, g.grid_h(), g.grid_w()]
    };
    Tensor::new(shape, data)
}

/// `[N,K,h,w] -> [N·h·w, K]`: one row of channel values per spatial position.
pub fn channels_last(x: &Tensor) -> Result<Tensor> {
    let (n, k, hw) = match *x.shape() {
        [n, k, h, w] => (n, k, h * w),
        [k, h, w] => (1, k, h * w),
        _ => return Err(Error::Shape { op: "channels_last", left: x.shape().to_vec(), right: vec![] }),
    };
    let xd = x.data();
    let mut out = vec![0.0; n * hw * k];
    for b in 0..n {
        for c in 0..k {
            for s in 0..hw {
                out[(b * hw + s) * k + c] = xd[(b * k + c) * hw + s];
            }
        }
    }
    Tensor::new(vec![n * hw, k], out)
}

/// Inverse of [`channels_last`] for the given `[N,K,h,w]` target shape.
pub fn channels_first(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let (n, k, hw) = match *shape {
        [n, k, h, w] => (n, k, h * w),
        [k, h, w] => (1, k, h * w),
        _ => return Err(Error::Shape { op: "channels_first", left: x.shape().to_vec(), right: shape.to_vec() }),
    };
    if x.len() != n * k * hw {
        return Err(Error::Shape { op: "channels_first", left: x.shape().to_vec(), right: shape.to_vec() });
    }
    let xd = x.data();
    let mut out = vec![0.0; n * hw * k];
    for b in 0..n {
        for c in 0..k {
            for s in 0..hw {
                out[(b * k + c) * hw + s] = xd[(b * hw + s) * k + c];
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Per-column mean and biased variance over the rows of `[R, C]`.
pub fn column_stats(a: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (a.rows(), a.cols());
    let mut mean = vec![0.0; cols];
    for row in a.data().chunks(cols) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = vec![0.0; cols];
    for row in a.data().chunks(cols) {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    for v in &mut var {
        *v /= rows as f64;
    }
    (mean, var)
}

/// Pairwise squared distances `[m,d] x [n,d] -> [m,n]`, from explicit
/// differences so that a point's distance to itself is exactly 0.
pub fn sq_dist(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, d) = check_2d("sq_dist", a)?;
    let (n, d2) = check_2d("sq_dist", b)?;
    if d != d2 {
        return Err(mismatch("sq_dist", a, b));
    }
    let (ad, bd) = (a.data(), b.data());
    let data = fill_rows(m, n, n * d, |i, row| {
        let ai = &ad[i * d..(i + 1) * d];
        for (j, o) in row.iter_mut().enumerate() {
            *o = ai
                .iter()
                .zip(&bd[j * d..(j + 1) * d])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
        }
    });
    Tensor::new(vec![m, n], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{seeded_init, Init};

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn scalar_maps() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(x.map(relu).data(), [0.0, 0.0, 2.0]);
        assert_eq!(0f64.tanh(), 0.0);
        assert_eq!(softplus(0.0), 2f64.ln());
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let i = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(matmul(&a, &i).unwrap(), a);
        assert_eq!(matmul_tn(&transpose(&a).unwrap(), &i).unwrap(), a);
        assert_eq!(matmul_nt(&a, &i).unwrap(), a);
        assert!(matmul(&a, &t(&[3, 1], &[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn matmul_against_naive() {
        let a = seeded_init(&[70, 33], Init::Gaussian { mean: 0.0, std: 1.0 }, 1).unwrap();
        let b = seeded_init(&[33, 40], Init::Gaussian { mean: 0.0, std: 1.0 }, 2).unwrap();
        let c = matmul(&a, &b).unwrap();
        for i in 0..70 {
            for j in 0..40 {
                let want: f64 = (0..33).map(|k| a.data()[i * 33 + k] * b.data()[k * 40 + j]).sum();
                assert!((c.data()[i * 40 + j] - want).abs() < 1e-12);
            }
        }
        let seq = instenc_core::exec::sequential(|| matmul(&a, &b).unwrap());
        assert_eq!(seq, c);
    }

    #[test]
    fn conv_examples() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let ones = Tensor::full(&[1, 1, 2, 2], 1.0);
        let y = conv_nonoverlap(&x, &ones).unwrap();
        assert_eq!(y.shape(), [1, 1, 1]);
        assert_eq!(y.data(), [10.0]);

        // one-hot kernels give back the patch entries
        let x = seeded_init(&[2, 4, 4], Init::Uniform { low: -1.0, high: 1.0 }, 3).unwrap();
        let p = 2;
        let len = 2 * p * p;
        let mut k = Tensor::zeros(&[len, 2, p, p]);
        for i in 0..len {
            k.data_mut()[i * len + i] = 1.0;
        }
        let y = conv_nonoverlap(&x, &k).unwrap();
        let rows = patches(&x, p).unwrap();
        assert_eq!(channels_last(&y).unwrap(), rows);
        assert!(matches!(conv_nonoverlap(&x, &Tensor::zeros(&[1, 2, 3, 3])), Err(Error::NotDivisible { .. })));
    }

    #[test]
    fn conv_against_direct_sum() {
        let x = seeded_init(&[1, 4, 4], Init::Gaussian { mean: 0.0, std: 1.0 }, 4).unwrap();
        let k = seeded_init(&[2, 1, 2, 2], Init::Gaussian { mean: 0.0, std: 1.0 }, 5).unwrap();
        let y = conv_nonoverlap(&x, &k).unwrap();
        for kk in 0..2 {
            for gy in 0..2 {
                for gx in 0..2 {
                    let mut want = 0.0;
                    for i in 0..2 {
                        for j in 0..2 {
                            want += x.data()[(gy * 2 + i) * 4 + gx * 2 + j] * k.data()[kk * 4 + i * 2 + j];
                        }
                    }
                    assert!((y.data()[kk * 4 + gy * 2 + gx] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn patch_roundtrip() {
        let x = seeded_init(&[3, 2, 8, 4], Init::Uniform { low: 0.0, high: 1.0 }, 6).unwrap();
        let g = PatchGrid::of(&x, 2).unwrap();
        let rows = patches(&x, 2).unwrap();
        assert_eq!(rows.shape(), [3 * 8, 8]);
        assert_eq!(unpatch(&rows, g).unwrap(), x);
        let y = seeded_init(&[2, 3, 2, 2], Init::Uniform { low: 0.0, high: 1.0 }, 7).unwrap();
        assert_eq!(channels_first(&channels_last(&y).unwrap(), y.shape()).unwrap(), y);
    }

    #[test]
    fn tiled_and_groups() {
        let a = t(&[4, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let b = t(&[2, 2], &[10.0, 20.0, 30.0, 40.0]);
        assert_eq!(add_tiled(&a, &b).unwrap().data(), [11.0, 22.0, 33.0, 44.0, 15.0, 26.0, 37.0, 48.0]);
        assert_eq!(add_tiled(&a, &t(&[2], &[1.0, 1.0])).unwrap().data()[0], 2.0);
        assert!(add_tiled(&a, &t(&[3, 2], &[0.0; 6])).is_err());
        assert_eq!(group_mean(&a, 2).unwrap().data(), [2.0, 3.0, 6.0, 7.0]);
        let s = group_softmax(&t(&[4, 1], &[0.0, 0.0, 1.0, 1.0]), 2).unwrap();
        assert_eq!(s.data(), [0.5, 0.5, 0.5, 0.5]);
        assert_eq!(mul_col(&a, &t(&[4], &[1.0, 0.0, 2.0, 1.0])).unwrap().data()[4], 10.0);
    }

    #[test]
    fn self_distance_is_zero() {
        let a = seeded_init(&[5, 3], Init::Gaussian { mean: 0.0, std: 10.0 }, 8).unwrap();
        let d = sq_dist(&a, &a).unwrap();
        for i in 0..5 {
            assert_eq!(d.data()[i * 5 + i], 0.0);
        }
    }
}
