//! Attacks on encoded data: distribution matching with MMD, the sensitive
//! attribute transfer attack, the matching game and plaintext recovery.

use instenc_core::{exec, rng};
use nalgebra::DMatrix;
use instenc_tensor::{ops, Adam, Bound, Init, ParamStore, Tape, Tensor, Var};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::align::{align_to, aligned_mse, min_cost_assignment};
use crate::encoders::{split_samples, stack_samples, ImageEncoder, Norm};
use crate::kernels::{mmd_unbiased, mmd_unbiased_var, KernelSpec};
use crate::learning::{auc, evaluate_auc, split_indices, train_classifier, ClassifierSpec, LabeledSets, SplitPreset};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    /// Match class by class when both sides carry labels.
    #[serde(default = "default_true")]
    pub class_conditional: bool,
    /// Independent initializations; the run with the lowest validation MMD
    /// wins. The first run starts from the given encoder.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_restarts() -> usize {
    1
}

fn default_validation() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

impl AttackConfig {
    /// 25 epochs, lr 1e-4, weight decay 1e-3, batch 128.
    pub fn reference(seed: u64) -> Self {
        AttackConfig {
            epochs: 25,
            lr: 1e-4,
            weight_decay: 1e-3,
            batch_size: 128,
            validation_fraction: default_validation(),
            class_conditional: true,
            restarts: default_restarts(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.restarts == 0 || self.batch_size < 2 || !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("attack needs epochs ≥ 1, restarts ≥ 1, batch_size ≥ 2 and lr > 0".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mmd: f64,
    pub validation_mmd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub validation_mmd: f64,
    pub best_epoch: usize,
    pub best_restart: usize,
    /// Validation MMD at the end of each restart.
    pub restart_mmd: Vec<f64>,
    /// Filled in by the caller once a true encoder is available.
    pub normalized_mse: Option<f64>,
    /// Curve of the winning restart.
    pub loss_curve: Vec<EpochLoss>,
    pub kernel: KernelSpec,
    pub config: AttackConfig,
}

/// MMD² between the estimate's rows for `public_batch` (batch statistics)
/// and the given real encoded rows.
pub fn attack_loss(
    tape: &mut Tape,
    bound: &Bound,
    estimate: &ImageEncoder,
    public_batch: &Tensor,
    private_rows: &Tensor,
    kernel: &KernelSpec,
) -> Result<Var> {
    let x = tape.leaf(public_batch.clone());
    let z_star = estimate.forward(tape, bound, x, Norm::Batch)?;
    let z = tape.leaf(private_rows.clone());
    mmd_unbiased_var(tape, z_star, z, kernel)
}

fn holdout(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng(seed));
    let v = ((n as f64) * fraction).round() as usize;
    let v = v.min(n.saturating_sub(2));
    let (val, train) = idx.split_at(v);
    (train.to_vec(), val.to_vec())
}

fn draw(pool: &[usize], k: usize, r: &mut rng::Rng) -> Vec<usize> {
    sample(r, pool.len(), k.min(pool.len())).into_iter().map(|i| pool[i]).collect()
}

/// Fits an encoder of the same architecture as `init` so that its outputs
/// on the public images match the real encoded sets in MMD. The returned
/// estimate has the parameters of the epoch (and restart) with the lowest
/// validation MMD and is calibrated on the public images.
pub fn mmd_attack(
    encoded_private: &[Tensor],
    private_labels: Option<&[usize]>,
    public: &Tensor,
    public_labels: Option<&[usize]>,
    init: &ImageEncoder,
    config: &AttackConfig,
) -> Result<(ImageEncoder, AttackReport)> {
    config.validate()?;
    let n_pub = init.check_images(public)?;
    if n_pub < 4 || encoded_private.len() < 4 {
        return Err(Error::TooFewSamples {
            what: "MMD attack",
            needed: 4,
            got: n_pub.min(encoded_private.len()),
        });
    }
    let (priv_train, priv_val) = holdout(encoded_private.len(), config.validation_fraction, rng::derive(config.seed, "private split"));
    let (pub_train, pub_val) = holdout(n_pub, config.validation_fraction, rng::derive(config.seed, "public split"));
    let private_rows = stack_samples(encoded_private)?;
    let per = encoded_private[0].rows();
    let rows_of = |samples: &[usize]| -> Tensor {
        let idx: Vec<usize> = samples.iter().flat_map(|&s| s * per..(s + 1) * per).collect();
        private_rows.select_rows(&idx)
    };
    let kernel = KernelSpec::median_heuristic(&[&rows_of(&priv_train)])?;

    let groups: Vec<(Vec<usize>, Vec<usize>)> = match (private_labels, public_labels) {
        (Some(pl), Some(ql)) if config.class_conditional => [0usize, 1]
            .iter()
            .map(|&c| {
                (
                    priv_train.iter().copied().filter(|&i| pl[i] == c).collect::<Vec<_>>(),
                    pub_train.iter().copied().filter(|&i| ql[i] == c).collect::<Vec<_>>(),
                )
            })
            .filter(|(a, b)| a.len() >= 2 && b.len() >= 2)
            .collect(),
        _ => vec![(priv_train.clone(), pub_train.clone())],
    };
    if groups.is_empty() {
        return Err(Error::SingleClass);
    }

    let problem = MatchProblem {
        public,
        groups,
        rows_of: &rows_of,
        kernel: &kernel,
        val_public: public.select_rows(&pub_val),
        val_private: rows_of(&priv_val),
        steps: priv_train.len().div_ceil(config.batch_size).max(1),
        config,
    };
    let runs = exec::map_range(config.restarts, |r| {
        let start = if r == 0 { Ok(init.clone()) } else { init.fresh(rng::derive_indexed(config.seed, "restart", r as u64)) };
        start.and_then(|s| problem.fit(s, r))
    });
    let runs = runs.into_iter().collect::<Result<Vec<Run>>>()?;
    let restart_mmd: Vec<f64> = runs.iter().map(|r| r.validation_mmd).collect();
    let best_restart = (0..runs.len())
        .min_by(|&a, &b| restart_mmd[a].total_cmp(&restart_mmd[b]))
        .expect("at least one restart");
    let run = runs.into_iter().nth(best_restart).expect("index in range");
    let mut est = init.clone();
    *est.params_mut() = run.params;
    est.calibrate(public)?;
    est.mark_adversarial();
    Ok((
        est,
        AttackReport {
            validation_mmd: run.validation_mmd,
            best_epoch: run.best_epoch,
            best_restart,
            restart_mmd,
            normalized_mse: None,
            loss_curve: run.curve,
            kernel,
            config: config.clone(),
        },
    ))
}

struct Run {
    validation_mmd: f64,
    best_epoch: usize,
    params: ParamStore,
    curve: Vec<EpochLoss>,
}

struct MatchProblem<'a, F: Fn(&[usize]) -> Tensor + Sync> {
    public: &'a Tensor,
    /// `(private pool, public pool)` per matched group.
    groups: Vec<(Vec<usize>, Vec<usize>)>,
    rows_of: &'a F,
    kernel: &'a KernelSpec,
    val_public: Tensor,
    val_private: Tensor,
    steps: usize,
    config: &'a AttackConfig,
}

impl<F: Fn(&[usize]) -> Tensor + Sync> MatchProblem<'_, F> {
    fn fit(&self, mut est: ImageEncoder, restart: usize) -> Result<Run> {
        let config = self.config;
        est.clear_calibration();
        let mut adam = Adam::new(config.lr).with_weight_decay(config.weight_decay);
        let mut r = rng::rng(rng::derive_indexed(config.seed, "batches", restart as u64));
        let per_group = (config.batch_size / self.groups.len()).max(2);
        let mut curve = Vec::with_capacity(config.epochs);
        let mut best: Option<(f64, usize, ParamStore)> = None;
        for epoch in 0..config.epochs {
            let mut total = 0.0;
            for _ in 0..self.steps {
                let mut tape = Tape::new();
                let bound = est.params().bind(&mut tape);
                let mut loss: Option<Var> = None;
                for (priv_pool, pub_pool) in &self.groups {
                    let pi = draw(priv_pool, per_group, &mut r);
                    let qi = draw(pub_pool, per_group, &mut r);
                    let l = attack_loss(&mut tape, &bound, &est, &self.public.select_rows(&qi), &(self.rows_of)(&pi), self.kernel)?;
                    loss = Some(match loss {
                        Some(prev) => tape.add(prev, l)?,
                        None => l,
                    });
                }
                let loss = tape.scale(loss.expect("at least one group"), 1.0 / self.groups.len() as f64)?;
                let lv = tape.value(loss).item().unwrap_or(f64::NAN);
                if !lv.is_finite() {
                    return Err(Error::Divergence {
                        stage: "mmd attack",
                        epoch,
                        loss: lv,
                    });
                }
                total += lv;
                let grads = bound.gradients(&tape, loss)?;
                adam.step(est.params_mut(), &grads)?;
            }
            let train_mmd = total / self.steps as f64;
            let validation_mmd = if self.val_public.rows() >= 2 && self.val_private.rows() >= 2 {
                mmd_unbiased(&est.encode_rows(&self.val_public)?, &self.val_private, self.kernel)?
            } else {
                train_mmd
            };
            if !validation_mmd.is_finite() {
                return Err(Error::Divergence {
                    stage: "mmd attack validation",
                    epoch,
                    loss: validation_mmd,
                });
            }
            curve.push(EpochLoss {
                epoch,
                train_mmd,
                validation_mmd,
            });
            if best.as_ref().map_or(true, |(b, _, _)| validation_mmd < *b) {
                best = Some((validation_mmd, epoch, est.params().clone()));
            }
        }
        let (validation_mmd, best_epoch, params) = best.expect("at least one epoch");
        Ok(Run {
            validation_mmd,
            best_epoch,
            params,
            curve,
        })
    }
}

/// Aligned MSE of the estimate against the true encoder on held-out
/// images, normalized by the MSE of predicting the mean true row. Each
/// encoder uses its own frozen statistics (or the held-out batch's when
/// uncalibrated).
pub fn normalized_mse(estimated: &ImageEncoder, truth: &ImageEncoder, heldout: &Tensor) -> Result<f64> {
    let n = truth.check_images(heldout)?;
    if n == 0 {
        return Err(Error::TooFewSamples {
            what: "normalized MSE",
            needed: 1,
            got: 0,
        });
    }
    let per = truth.patches_per_image();
    let est = split_samples(&estimated.encode_rows(heldout)?, per)?;
    let real = split_samples(&truth.encode_rows(heldout)?, per)?;
    crate::align::normalized_mse_sets(&est, &real)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveReport {
    pub auc_on_z_star: f64,
    pub auc_on_z: f64,
}

/// Trains a classifier for the sensitive attribute on the estimate's
/// encoding of the public images (60-20-20 split), then reports its AUC on
/// the held-out public encodings and on the real encoded private sets.
pub fn sensitive_feature_attack(
    estimated: &ImageEncoder,
    public: &Tensor,
    public_sensitive: &[usize],
    encoded_private: &[Tensor],
    private_sensitive: &[usize],
    classifier: &ClassifierSpec,
) -> Result<SensitiveReport> {
    let n = estimated.check_images(public)?;
    if public_sensitive.len() != n || private_sensitive.len() != encoded_private.len() {
        return Err(Error::Config("sensitive labels do not match the sample counts".into()));
    }
    let z_star = split_samples(&estimated.encode_rows(public)?, estimated.patches_per_image())?;
    let data = LabeledSets::from_sets(&z_star, public_sensitive.to_vec())?;
    let split = split_indices(n, SplitPreset::Standard, rng::derive(classifier.seed, "sensitive split"));
    let model = train_classifier(&data.subset(&split.train), Some(&data.subset(&split.dev)), classifier)?;
    let auc_on_z_star = evaluate_auc(&model, &data.subset(&split.test))?;
    let real = LabeledSets::from_sets(encoded_private, private_sensitive.to_vec())?;
    let auc_on_z = evaluate_auc(&model, &real)?;
    Ok(SensitiveReport { auc_on_z_star, auc_on_z })
}

/// Order-free summary of a set of rows: after centring on the set's mean
/// row, the sorted row norms followed by the sorted pairwise cosines.
pub fn set_geometry(rows: &Tensor) -> Vec<f64> {
    let (p, d) = (rows.rows(), rows.cols());
    let (mean, _) = ops::column_stats(rows);
    let centred: Vec<Vec<f64>> = (0..p).map(|i| rows.row(i).iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let norms: Vec<f64> = centred.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut out = norms.clone();
    out.sort_by(f64::total_cmp);
    let mut cos = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in i + 1..p {
            let dot: f64 = (0..d).map(|k| centred[i][k] * centred[j][k]).sum();
            let den = norms[i] * norms[j];
            cos.push(if den > 0.0 { dot / den } else { 0.0 });
        }
    }
    cos.sort_by(f64::total_cmp);
    out.extend(cos);
    out
}

/// Scores of the centred `rows` on their `k` leading principal axes, each
/// axis signed so its scores have non-negative third moment. Missing axes
/// are zero.
fn principal_coordinates(rows: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let (m, d) = (rows.len(), rows.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; k]; m];
    if m < 2 || d == 0 {
        return out;
    }
    let mean: Vec<f64> = (0..d).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / m as f64).collect();
    let a = DMatrix::from_fn(m, d, |i, c| rows[i][c] - mean[c]);
    let svd = a.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut axes: Vec<usize> = (0..svd.singular_values.len()).collect();
    axes.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    for (slot, &axis) in axes.iter().take(k).enumerate() {
        let s = svd.singular_values[axis];
        let skew: f64 = (0..m).map(|i| u[(i, axis)].powi(3)).sum();
        let sign = if skew < 0.0 { -1.0 } else { 1.0 };
        for (i, row) in out.iter_mut().enumerate() {
            row[slot] = sign * s * u[(i, axis)];
        }
    }
    out
}

/// Number of collection-relative columns [`geometry_matrix`] appends.
fn relative_features(patches_per_set: usize) -> usize {
    2 + DISTANCE_QUANTILES.len() + CENTROID_COMPONENTS + PATCH_COMPONENTS * patches_per_set
}

const CENTROID_COMPONENTS: usize = 6;
const PATCH_COMPONENTS: usize = 4;

const DISTANCE_QUANTILES: [f64; 7] = [0.0, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9];

/// Per-set geometry plus where each set sits in its collection: distance
/// of its centroid from the collection centroid, mean centroid distance to
/// the other sets, quantiles of those distances, its centroid's leading
/// principal coordinates within the collection, and the sorted coordinates
/// of its rows on the leading principal axes of all pooled rows.
/// Every column is replaced by its standardized ranks, so a monotone
/// rescaling by the encoder leaves the matrix unchanged.
fn geometry_matrix(sets: &[Tensor]) -> Result<Tensor> {
    let n = sets.len();
    let per = sets.first().map_or(0, Tensor::rows);
    let centroids: Vec<Vec<f64>> = sets.iter().map(|s| ops::column_stats(s).0).collect();
    let d = centroids.first().map_or(0, Vec::len);
    let centre: Vec<f64> = (0..d).map(|k| centroids.iter().map(|c| c[k]).sum::<f64>() / n as f64).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let centroid_pc = principal_coordinates(&centroids, CENTROID_COMPONENTS);
    let pooled: Vec<Vec<f64>> = sets.iter().flat_map(|s| (0..s.rows()).map(|r| s.row(r).to_vec())).collect();
    let patch_pc = principal_coordinates(&pooled, PATCH_COMPONENTS);
    let rows: Vec<Vec<f64>> = exec::map_range(n, |i| {
        let mut f = set_geometry(&sets[i]);
        let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist(&centroids[i], &centroids[j])).collect();
        others.sort_by(f64::total_cmp);
        let last = others.len().saturating_sub(1);
        f.push(dist(&centroids[i], &centre));
        f.push(others.iter().sum::<f64>() / others.len().max(1) as f64);
        f.extend(DISTANCE_QUANTILES.iter().map(|q| others.get((q * last as f64).round() as usize).copied().unwrap_or(0.0)));
        f.extend(&centroid_pc[i]);
        for c in 0..PATCH_COMPONENTS {
            let mut v: Vec<f64> = (0..per).map(|r| patch_pc[i * per + r][c]).collect();
            v.sort_by(f64::total_cmp);
            f.extend(v);
        }
        f
    });
    let cols = rows.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n * cols];
    let scale = ((n * n) as f64 - 1.0).max(1.0) / 12.0;
    for c in 0..cols {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| rows[a][c].total_cmp(&rows[b][c]));
        if rows[order[0]][c] == rows[order[n - 1]][c] {
            continue;
        }
        // tied values share their mean rank
        let mut k = 0;
        while k < n {
            let mut e = k;
            while e + 1 < n && rows[order[e + 1]][c] == rows[order[k]][c] {
                e += 1;
            }
            let rank = (k + e) as f64 / 2.0 - (n as f64 - 1.0) / 2.0;
            for &i in &order[k..=e] {
                out[i * cols + c] = rank / scale.sqrt();
            }
            k = e + 1;
        }
    }
    Ok(Tensor::new(vec![n, cols], out)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    /// Encoders drawn once to describe each plaintext by the geometry its
    /// encodings are expected to have.
    #[serde(default = "default_references")]
    pub references: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_embed() -> usize {
    16
}

fn default_references() -> usize {
    8
}

/// Two towers with a bilinear score
/// `tanh(φ(x)·W_x + b_x) · A · tanh(ψ(z)·W_z + b_z)ᵀ`. The plaintext side
/// sees the raw patch geometry next to the geometry averaged over encodings
/// by the reference encoders; the ciphertext side sees the geometry alone.
/// `A` starts at zero, so an untrained model scores every pair alike.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingModel {
    params: ParamStore,
    references: Vec<ImageEncoder>,
    seed: u64,
}

impl MatchingModel {
    fn new(architecture: &ImageEncoder, config: &MatchingConfig) -> Result<MatchingModel> {
        let references = (0..config.references)
            .map(|r| architecture.fresh(rng::derive_indexed(config.seed, "reference encoder", r as u64)))
            .collect::<Result<Vec<_>>>()?;
        let per = architecture.patches_per_image();
        let z_dim = per + per * (per - 1) / 2 + relative_features(per);
        let x_dim = z_dim * if references.is_empty() { 1 } else { 2 };
        let e = config.embed_dim;
        let mut p = ParamStore::new(config.seed);
        for (side, dim) in [("x", x_dim), ("z", z_dim)] {
            p.init(&format!("{side}.w"), &[dim, e], Init::fan_in(dim))?;
            p.init(&format!("{side}.b"), &[e], Init::Gaussian { mean: 0.0, std: 0.0 })?;
        }
        p.init("a", &[e, e], Init::Gaussian { mean: 0.0, std: 0.0 })?;
        Ok(MatchingModel {
            params: p,
            references,
            seed: config.seed,
        })
    }

    fn patch(&self) -> usize {
        self.references.first().map_or(0, |r| r.spec().patch())
    }

    fn plaintext_features(&self, images: &Tensor, patch: usize) -> Result<Tensor> {
        let per = ops::PatchGrid::of(images, patch)?.patches_per_image();
        let raw = geometry_matrix(&split_samples(&ops::patches(images, patch)?, per)?)?;
        if self.references.is_empty() {
            return Ok(raw);
        }
        let each = exec::map_range(self.references.len(), |r| {
            let z = self.references[r].encode_batch(images, rng::derive_indexed(self.seed, "reference shuffle", r as u64))?;
            geometry_matrix(&z)
        });
        let mut mean = vec![0.0; raw.len()];
        for g in each {
            for (m, v) in mean.iter_mut().zip(g?.data()) {
                *m += v / self.references.len() as f64;
            }
        }
        let cols = raw.cols();
        let joined: Vec<f64> = raw.data().chunks(cols).zip(mean.chunks(cols)).flat_map(|(a, b)| a.iter().chain(b).copied()).collect();
        Ok(Tensor::new(vec![raw.rows(), 2 * cols], joined)?)
    }

    fn score_var(&self, tape: &mut Tape, bound: &Bound, fx: Tensor, fz: Tensor) -> Result<Var> {
        let tower = |tape: &mut Tape, input: Tensor, side: &str| -> Result<Var> {
            let v = tape.leaf(input);
            let h = tape.matmul(v, bound.get(&format!("{side}.w"))?)?;
            let h = tape.add_tiled(h, bound.get(&format!("{side}.b"))?)?;
            Ok(tape.tanh(h)?)
        };
        let ex = tower(tape, fx, "x")?;
        let ez = tower(tape, fz, "z")?;
        let left = tape.matmul(ex, bound.get("a")?)?;
        let right = tape.transpose(ez)?;
        Ok(tape.matmul(left, right)?)
    }

    /// `[N, N]` scores of image `i` against encoded set `j`.
    pub fn score_matrix(&self, images: &Tensor, encoded: &[Tensor]) -> Result<Tensor> {
        if images.shape().first() != Some(&encoded.len()) {
            return Err(Error::Config(format!("{:?} images for {} encoded sets", images.shape(), encoded.len())));
        }
        let fx = self.plaintext_features(images, self.patch())?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let s = self.score_var(&mut tape, &bound, fx, geometry_matrix(encoded)?)?;
        Ok(tape.value(s).clone())
    }
}

/// Trains the matching model by drawing a fresh encoder of `architecture`'s
/// shape every iteration and scoring matched against in-batch mismatched
/// pairs with a balanced binary cross-entropy.
pub fn matching_model_train(images: &Tensor, architecture: &ImageEncoder, config: &MatchingConfig) -> Result<MatchingModel> {
    let n = architecture.check_images(images)?;
    if n < 2 || config.batch_size < 2 || !(config.lr > 0.0) {
        return Err(Error::Config("matching needs two or more images, batch_size ≥ 2 and lr > 0".into()));
    }
    let patch = architecture.spec().patch();
    let mut model = MatchingModel::new(architecture, config)?;
    let mut adam = Adam::new(config.lr);
    let mut r = rng::rng(rng::derive(config.seed, "matching batches"));
    let b = config.batch_size.min(n);
    let eye: Vec<f64> = (0..b * b).map(|k| if k / b == k % b { 1.0 } else { 0.0 }).collect();
    let off: Vec<f64> = eye.iter().map(|x| 1.0 - x).collect();
    // the whole collection's plaintext features never change
    let full = if b == n { Some(model.plaintext_features(images, patch)?) } else { None };
    for it in 0..config.iterations {
        let enc = architecture.fresh(rng::derive_indexed(config.seed, "encoder", it as u64))?;
        let idx = sample(&mut r, n, b).into_vec();
        let batch = images.select_rows(&idx);
        let encoded = enc.encode_batch(&batch, rng::derive_indexed(config.seed, "shuffle", it as u64))?;
        let fx = match &full {
            Some(f) => f.select_rows(&idx),
            None => model.plaintext_features(&batch, patch)?,
        };
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let s = model.score_var(&mut tape, &bound, fx, geometry_matrix(&encoded)?)?;
        let neg_s = tape.scale(s, -1.0)?;
        let pos_term = tape.softplus(neg_s)?;
        let neg_term = tape.softplus(s)?;
        let m_pos = tape.leaf(Tensor::new(vec![b, b], eye.clone())?);
        let m_neg = tape.leaf(Tensor::new(vec![b, b], off.clone())?);
        let p = tape.mul(pos_term, m_pos)?;
        let q = tape.mul(neg_term, m_neg)?;
        let p = tape.sum(p)?;
        let q = tape.sum(q)?;
        let p = tape.scale(p, 1.0 / b as f64)?;
        let q = tape.scale(q, 1.0 / (b * (b - 1)) as f64)?;
        let loss = tape.add(p, q)?;
        let lv = tape.value(loss).item().unwrap_or(f64::NAN);
        if !lv.is_finite() {
            return Err(Error::Divergence {
                stage: "matching model",
                epoch: it,
                loss: lv,
            });
        }
        let grads = bound.gradients(&tape, loss)?;
        adam.step(&mut model.params, &grads)?;
    }
    Ok(model)
}

/// AUC of matched pairs (the diagonal) against all mismatched pairs.
pub fn reidentification_auc(model: &MatchingModel, images: &Tensor, encoded: &[Tensor]) -> Result<f64> {
    let s = model.score_matrix(images, encoded)?;
    let n = encoded.len();
    let labels: Vec<usize> = (0..n * n).map(|k| usize::from(k / n == k % n)).collect();
    auc(s.data(), &labels)
}

/// Maximum-score one-to-one pairing: `result[i]` is the encoded set
/// assigned to image `i`.
pub fn match_pairs(model: &MatchingModel, images: &Tensor, encoded: &[Tensor]) -> Result<Vec<usize>> {
    if encoded.len() == 1 {
        return Ok(vec![0]);
    }
    let s = model.score_matrix(images, encoded)?;
    let cost: Vec<f64> = s.data().iter().map(|x| -x).collect();
    Ok(min_cost_assignment(&cost, encoded.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default = "default_validation")]
    pub heldout_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaintextReport {
    /// Aligned MSE of the recovered encoder on held-out pairs.
    pub mse: f64,
    /// Same for a freshly drawn encoder of the same architecture.
    pub random_mse: f64,
    pub ratio: f64,
    pub loss_curve: Vec<f64>,
    pub train_pairs: usize,
    pub heldout_pairs: usize,
}

/// Recovers an encoder from matched pairs `(image, encoded set)` by
/// gradient descent on the aligned squared error.
pub fn plaintext_attack(images: &Tensor, encoded: &[Tensor], init: &ImageEncoder, config: &FitConfig) -> Result<(ImageEncoder, PlaintextReport)> {
    let n = if images.is_empty() { 0 } else { init.check_images(images)? };
    if n == 0 || encoded.is_empty() {
        return Err(Error::TooFewSamples {
            what: "plaintext attack",
            needed: 1,
            got: 0,
        });
    }
    if n != encoded.len() || config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::Config("pairs, batch_size or lr are invalid".into()));
    }
    let (train, held) = if n >= 4 {
        holdout(n, config.heldout_fraction, rng::derive(config.seed, "pairs split"))
    } else {
        ((0..n).collect(), (0..n).collect())
    };
    let held = if held.is_empty() { train.clone() } else { held };
    let mut est = init.clone();
    est.clear_calibration();
    let mut adam = Adam::new(config.lr);
    let mut order = train.clone();
    let mut curve = Vec::with_capacity(config.epochs);
    let batch = if train.len() >= 2 { config.batch_size.max(2) } else { 1 };
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::rng(rng::derive_indexed(config.seed, "epoch", epoch as u64)));
        let mut total = 0.0;
        let chunks: Vec<&[usize]> = order.chunks(batch).filter(|c| c.len() >= 2 || train.len() < 2).collect();
        for chunk in &chunks {
            let mut tape = Tape::new();
            let bound = est.params().bind(&mut tape);
            let x = tape.leaf(images.select_rows(chunk));
            let norm = if chunk.len() * est.patches_per_image() >= 2 { Norm::Batch } else { Norm::Fixed(&[]) };
            let out = est.forward(&mut tape, &bound, x, norm)?;
            let per_sample = split_samples(tape.value(out), est.patches_per_image())?;
            let targets: Vec<Tensor> = chunk
                .iter()
                .zip(&per_sample)
                .map(|(&i, o)| align_to(o, &encoded[i]))
                .collect::<Result<_>>()?;
            let t = tape.leaf(stack_samples(&targets)?);
            let d = tape.sub(out, t)?;
            let sq = tape.mul(d, d)?;
            let loss = tape.mean(sq)?;
            let lv = tape.value(loss).item().unwrap_or(f64::NAN);
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    stage: "plaintext attack",
                    epoch,
                    loss: lv,
                });
            }
            total += lv;
            let grads = bound.gradients(&tape, loss)?;
            adam.step(est.params_mut(), &grads)?;
        }
        curve.push(total / chunks.len().max(1) as f64);
    }
    let train_images = images.select_rows(&train);
    est.calibrate(&train_images)?;
    est.mark_adversarial();
    let held_images = images.select_rows(&held);
    let held_truth: Vec<Tensor> = held.iter().map(|&i| encoded[i].clone()).collect();
    let per = est.patches_per_image();
    let mse = aligned_mse(&split_samples(&est.encode_rows(&held_images)?, per)?, &held_truth)?;
    let mut random = init.fresh(rng::derive(config.seed, "random encoder"))?;
    random.calibrate(&train_images)?;
    let random_mse = aligned_mse(&split_samples(&random.encode_rows(&held_images)?, per)?, &held_truth)?;
    Ok((
        est,
        PlaintextReport {
            mse,
            random_mse,
            ratio: mse / random_mse,
            loss_curve: curve,
            train_pairs: train.len(),
            heldout_pairs: held.len(),
        },
    ))
}
