//! Order-invariant classifiers on encoded sets, rank AUC and the single and
//! multi-owner training settings.

use instenc_core::rng;
use instenc_tensor::ops;
use instenc_tensor::{Adam, Bound, Init, ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoders::{raw_patch_rows, stack_samples, ImageEncoder, ImageEncoderSpec};
use crate::{Error, Result};

/// Mann–Whitney AUC of `scores` for binary `labels`; tied scores count 1/2.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Config(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Config(format!("AUC needs binary labels, got {bad}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of 1-based average ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Samples as equal-size sets of row vectors plus binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSets {
    rows: Tensor,
    set_size: usize,
    labels: Vec<usize>,
}

impl LabeledSets {
    /// `rows` is `[N·set_size, D]` with each sample's rows contiguous.
    pub fn new(rows: Tensor, set_size: usize, labels: Vec<usize>) -> Result<LabeledSets> {
        if rows.rank() != 2 || set_size == 0 || rows.rows() != labels.len() * set_size {
            return Err(Error::Config(format!(
                "{:?} rows do not hold {} sets of {set_size}",
                rows.shape(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Config("labels must be 0 or 1".into()));
        }
        Ok(LabeledSets { rows, set_size, labels })
    }

    pub fn from_sets(sets: &[Tensor], labels: Vec<usize>) -> Result<LabeledSets> {
        let rows = stack_samples(sets)?;
        let set_size = sets[0].rows();
        LabeledSets::new(rows, set_size, labels)
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn set_size(&self) -> usize {
        self.set_size
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn row_indices(&self, samples: &[usize]) -> Vec<usize> {
        samples
            .iter()
            .flat_map(|&s| s * self.set_size..(s + 1) * self.set_size)
            .collect()
    }

    pub fn subset(&self, samples: &[usize]) -> LabeledSets {
        LabeledSets {
            rows: self.rows.select_rows(&self.row_indices(samples)),
            set_size: self.set_size,
            labels: samples.iter().map(|&s| self.labels[s]).collect(),
        }
    }

    pub fn concat(parts: &[&LabeledSets]) -> Result<LabeledSets> {
        let first = parts.first().ok_or(Error::TooFewSamples {
            what: "concatenation",
            needed: 1,
            got: 0,
        })?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.set_size != first.set_size || p.dim() != first.dim() {
                return Err(Error::InputShape {
                    expected: vec![first.set_size, first.dim()],
                    got: vec![p.set_size, p.dim()],
                });
            }
            data.extend_from_slice(p.rows.data());
            labels.extend_from_slice(&p.labels);
        }
        let rows = Tensor::new(vec![labels.len() * first.set_size, first.dim()], data)?;
        LabeledSets::new(rows, first.set_size, labels)
    }

    fn has_both_classes(&self) -> bool {
        self.labels.contains(&0) && self.labels.contains(&1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Per-element layer, mean pool, then an MLP head.
    SetPoolMlp,
    /// Mean pool followed by a linear logit.
    Logistic,
    /// Per-element layer, softmax attention pooling, MLP head.
    Attention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Stop after this many epochs without a better dev AUC.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> usize {
    32
}

fn default_batch() -> usize {
    32
}

impl ClassifierSpec {
    pub fn new(kind: ClassifierKind, seed: u64) -> Self {
        ClassifierSpec {
            kind,
            hidden: default_hidden(),
            epochs: 40,
            lr: 3e-3,
            weight_decay: 0.0,
            batch_size: default_batch(),
            patience: None,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("classifier hidden, batch_size and lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    spec: ClassifierSpec,
    params: ParamStore,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    set_size: usize,
}

/// Per-element standardization, then each set's rows sorted
/// lexicographically so the input order can never reach the model.
fn prepare(rows: &Tensor, set_size: usize, mean: &[f64], inv_std: &[f64]) -> Result<Tensor> {
    let d = rows.cols();
    let mut data = Vec::with_capacity(rows.len());
    for set in rows.data().chunks(set_size * d) {
        let mut members: Vec<Vec<f64>> = set
            .chunks(d)
            .map(|r| r.iter().zip(mean).zip(inv_std).map(|((x, m), s)| (x - m) * s).collect())
            .collect();
        members.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for m in members {
            data.extend(m);
        }
    }
    Ok(Tensor::new(rows.shape().to_vec(), data)?)
}

impl Classifier {
    fn init(spec: &ClassifierSpec, dim: usize, set_size: usize, mean: Vec<f64>, inv_std: Vec<f64>) -> Result<Classifier> {
        let mut p = ParamStore::new(spec.seed);
        let h = spec.hidden;
        let zero = Init::Gaussian { mean: 0.0, std: 0.0 };
        match spec.kind {
            ClassifierKind::Logistic => {
                p.init("out.w", &[dim, 1], Init::fan_in(dim))?;
                p.init("out.b", &[1], zero)?;
            }
            ClassifierKind::SetPoolMlp | ClassifierKind::Attention => {
                p.init("elem.w", &[dim, h], Init::fan_in(dim))?;
                p.init("elem.b", &[h], zero)?;
                p.init("head.w", &[h, h], Init::fan_in(h))?;
                p.init("head.b", &[h], zero)?;
                p.init("out.w", &[h, 1], Init::fan_in(h))?;
                p.init("out.b", &[1], zero)?;
                if spec.kind == ClassifierKind::Attention {
                    p.init("attn.w", &[h, 1], Init::fan_in(h))?;
                }
            }
        }
        Ok(Classifier {
            spec: spec.clone(),
            params: p,
            mean,
            inv_std,
            set_size,
        })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Logits `[N, 1]` for prepared rows.
    fn logits(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let p = self.set_size;
        let pooled = match self.spec.kind {
            ClassifierKind::Logistic => {
                let m = tape.group_mean(x, p)?;
                let z = tape.matmul(m, bound.get("out.w")?)?;
                return Ok(tape.add_tiled(z, bound.get("out.b")?)?);
            }
            ClassifierKind::SetPoolMlp => {
                let h = self.element_layer(tape, bound, x)?;
                tape.group_mean(h, p)?
            }
            ClassifierKind::Attention => {
                let h = self.element_layer(tape, bound, x)?;
                let s = tape.matmul(h, bound.get("attn.w")?)?;
                let a = tape.group_softmax(s, p)?;
                let weighted = tape.mul_col(h, a)?;
                let m = tape.group_mean(weighted, p)?;
                tape.scale(m, p as f64)?
            }
        };
        let h = tape.matmul(pooled, bound.get("head.w")?)?;
        let h = tape.add_tiled(h, bound.get("head.b")?)?;
        let h = tape.relu(h)?;
        let z = tape.matmul(h, bound.get("out.w")?)?;
        Ok(tape.add_tiled(z, bound.get("out.b")?)?)
    }

    fn element_layer(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let h = tape.matmul(x, bound.get("elem.w")?)?;
        let h = tape.add_tiled(h, bound.get("elem.b")?)?;
        Ok(tape.relu(h)?)
    }

    fn check_input(&self, rows: &Tensor, set_size: usize) -> Result<()> {
        if set_size != self.set_size || rows.cols() != self.mean.len() {
            return Err(Error::InputShape {
                expected: vec![self.set_size, self.mean.len()],
                got: vec![set_size, rows.cols()],
            });
        }
        Ok(())
    }

    /// Logit per set of `rows` (`[N·set_size, D]`).
    pub fn scores(&self, rows: &Tensor, set_size: usize) -> Result<Vec<f64>> {
        self.check_input(rows, set_size)?;
        let x = prepare(rows, set_size, &self.mean, &self.inv_std)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let xv = tape.leaf(x);
        let z = self.logits(&mut tape, &bound, xv)?;
        Ok(tape.value(z).data().to_vec())
    }

    pub fn score_sets(&self, data: &LabeledSets) -> Result<Vec<f64>> {
        self.scores(&data.rows, data.set_size)
    }

    /// Fraction of sets whose logit sign matches the label.
    pub fn accuracy(&self, data: &LabeledSets) -> Result<f64> {
        let s = self.score_sets(data)?;
        let hits = s.iter().zip(&data.labels).filter(|(z, &l)| (**z > 0.0) == (l == 1)).count();
        Ok(hits as f64 / data.len() as f64)
    }
}

/// Mean binary cross-entropy of logits `z` against labels, written as
/// `softplus(z) - y·z`.
fn bce(tape: &mut Tape, z: Var, labels: &[usize]) -> Result<Var> {
    let y = tape.leaf(Tensor::new(vec![labels.len(), 1], labels.iter().map(|&l| l as f64).collect())?);
    let sp = tape.softplus(z)?;
    let yz = tape.mul(y, z)?;
    let l = tape.sub(sp, yz)?;
    Ok(tape.mean(l)?)
}

/// Trains with Adam on shuffled minibatches. With a dev set the returned
/// parameters are those of the epoch with the best dev AUC; `patience`
/// then ends training early.
pub fn train_classifier(train: &LabeledSets, dev: Option<&LabeledSets>, spec: &ClassifierSpec) -> Result<Classifier> {
    spec.validate()?;
    if !train.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let (mean, var) = ops::column_stats(&train.rows);
    let inv_std = var.iter().map(|v| if *v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    let mut model = Classifier::init(spec, train.dim(), train.set_size, mean, inv_std)?;
    let x = prepare(&train.rows, train.set_size, &model.mean, &model.inv_std)?;
    let prepared = LabeledSets::new(x, train.set_size, train.labels.clone())?;
    let dev = dev.filter(|d| d.has_both_classes());

    let mut adam = Adam::new(spec.lr).with_weight_decay(spec.weight_decay);
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng::rng(rng::derive_indexed(spec.seed, "epoch", epoch as u64)));
        for batch in order.chunks(spec.batch_size) {
            let part = prepared.subset(batch);
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let xv = tape.leaf(part.rows.clone());
            let z = model.logits(&mut tape, &bound, xv)?;
            let loss = bce(&mut tape, z, &part.labels)?;
            let lv = tape.value(loss).item().unwrap_or(f64::NAN);
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    stage: "classifier",
                    epoch,
                    loss: lv,
                });
            }
            let grads = bound.gradients(&tape, loss)?;
            adam.step(&mut model.params, &grads)?;
        }
        if let Some(d) = dev {
            let score = auc(&model.score_sets(d)?, &d.labels)?;
            if best.as_ref().map_or(true, |(b, _)| score > *b) {
                best = Some((score, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if spec.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(model)
}

pub fn evaluate_auc(model: &Classifier, heldout: &LabeledSets) -> Result<f64> {
    auc(&model.score_sets(heldout)?, &heldout.labels)
}

/// Train / dev / test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPreset {
    /// 60-20-20.
    Standard,
    /// 45-45-10.
    Spam,
}

impl SplitPreset {
    pub fn fractions(self) -> [f64; 3] {
        match self {
            SplitPreset::Standard => [0.6, 0.2, 0.2],
            SplitPreset::Spam => [0.45, 0.45, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random split of `0..n`; sizes are rounded down for train and dev, the
/// remainder goes to test.
pub fn split_indices(n: usize, preset: SplitPreset, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng(seed));
    let [a, b, _] = preset.fractions();
    let n_train = (n as f64 * a).floor() as usize;
    let n_dev = (n as f64 * b).floor() as usize;
    Split {
        train: idx[..n_train].to_vec(),
        dev: idx[n_train..n_train + n_dev].to_vec(),
        test: idx[n_train + n_dev..].to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    SingleOwner,
    CombinedClear,
    CombinedRandomized,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::SingleOwner => "single_owner",
            Setting::CombinedClear => "combined_clear",
            Setting::CombinedRandomized => "combined_randomized",
        }
    }
}

/// One owner's labeled images `[N, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnerImages {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl OwnerImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// How owners turn images into sets before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoding {
    /// Raw flattened patches.
    Raw { patch: usize },
    /// A randomized encoder; the spec's seed is replaced per run.
    Encoder { spec: ImageEncoderSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub setting: Setting,
    /// Test AUC per owner; `None` for owners without data.
    pub per_owner_auc: Vec<Option<f64>>,
    pub mean_auc: f64,
    pub split: [f64; 3],
    pub seed: u64,
    pub encoder_seeds: Vec<Option<u64>>,
}

fn encode_owner(owner: &OwnerImages, encoding: &Encoding, encoder_seed: u64, shuffle_seed: u64) -> Result<LabeledSets> {
    match encoding {
        Encoding::Raw { patch } => {
            let rows = raw_patch_rows(&owner.images, *patch)?;
            let set_size = rows.rows() / owner.len();
            LabeledSets::new(rows, set_size, owner.labels.clone())
        }
        Encoding::Encoder { spec } => {
            let mut enc = ImageEncoder::build(&spec.with_seed(encoder_seed))?;
            enc.calibrate(&owner.images)?;
            let sets = enc.encode_batch(&owner.images, shuffle_seed)?;
            LabeledSets::from_sets(&sets, owner.labels.clone())
        }
    }
}

/// Trains and tests one setting. Owner `i` always gets the split seeded by
/// `("split", i)`; its own encoder is seeded by `("encoder", i)`, and the
/// shared encoder of the clear setting is owner 0's. Owners without data
/// are skipped, so a combined run whose other owners are empty reproduces
/// the single-owner run of owner 0.
pub fn run_setting(
    setting: Setting,
    owners: &[OwnerImages],
    encoding: &Encoding,
    classifier: &ClassifierSpec,
    preset: SplitPreset,
    seed: u64,
) -> Result<TrainReport> {
    let needed = if setting == Setting::SingleOwner { 1 } else { 2 };
    if owners.len() < needed || owners.iter().all(OwnerImages::is_empty) {
        return Err(Error::TooFewSamples {
            what: "owners for this setting",
            needed,
            got: owners.iter().filter(|o| !o.is_empty()).count(),
        });
    }
    let encoder_seed = |i: usize| match setting {
        Setting::CombinedClear => rng::derive_indexed(seed, "encoder", 0),
        _ => rng::derive_indexed(seed, "encoder", i as u64),
    };
    let classifier_for = |i: usize| ClassifierSpec {
        seed: rng::derive_indexed(seed, "classifier", i as u64),
        ..classifier.clone()
    };

    let mut parts = Vec::with_capacity(owners.len());
    for (i, owner) in owners.iter().enumerate() {
        if owner.is_empty() {
            parts.push(None);
            continue;
        }
        let data = encode_owner(owner, encoding, encoder_seed(i), rng::derive_indexed(seed, "shuffle", i as u64))?;
        let split = split_indices(owner.len(), preset, rng::derive_indexed(seed, "split", i as u64));
        parts.push(Some((data.subset(&split.train), data.subset(&split.dev), data.subset(&split.test))));
    }

    let mut per_owner_auc = vec![None; owners.len()];
    match setting {
        Setting::SingleOwner => {
            for (i, p) in parts.iter().enumerate() {
                if let Some((train, dev, test)) = p {
                    let model = train_classifier(train, Some(dev), &classifier_for(i))?;
                    per_owner_auc[i] = Some(evaluate_auc(&model, test)?);
                }
            }
        }
        Setting::CombinedClear | Setting::CombinedRandomized => {
            let present: Vec<_> = parts.iter().flatten().collect();
            let train = LabeledSets::concat(&present.iter().map(|p| &p.0).collect::<Vec<_>>())?;
            let dev = LabeledSets::concat(&present.iter().map(|p| &p.1).collect::<Vec<_>>())?;
            let model = train_classifier(&train, Some(&dev), &classifier_for(0))?;
            for (i, p) in parts.iter().enumerate() {
                if let Some((_, _, test)) = p {
                    per_owner_auc[i] = Some(evaluate_auc(&model, test)?);
                }
            }
        }
    }
    let present: Vec<f64> = per_owner_auc.iter().flatten().copied().collect();
    let encoder_seeds = owners
        .iter()
        .enumerate()
        .map(|(i, o)| match encoding {
            Encoding::Encoder { .. } if !o.is_empty() => Some(encoder_seed(i)),
            _ => None,
        })
        .collect();
    Ok(TrainReport {
        setting,
        mean_auc: present.iter().sum::<f64>() / present.len() as f64,
        per_owner_auc,
        split: preset.fractions(),
        seed,
        encoder_seeds,
    })
}
