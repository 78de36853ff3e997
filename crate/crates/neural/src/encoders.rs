//! Randomized encoders: the patch network for images, a single-layer linear
//! baseline and a recurrent network for token sequences.
//!
//! Image encoders map `[N, C, H, W]` batches to one row per patch,
//! `[N·P, K]`, with the `P` rows of a sample contiguous and in raster order.
//! What leaves an encoder through [`ImageEncoder::encode_image`] is the same
//! set of rows in a fresh random order.

use std::path::Path;

use instenc_core::{exec, rng};
use instenc_tensor::ops::{self, PatchGrid};
use instenc_tensor::{Bound, Init, ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Batch normalization with an affine scale and shift.
    #[default]
    Batch,
    /// No normalization layers at all.
    None,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchEncoderSpec {
    pub patch: usize,
    /// Number of blocks, the patch convolution included.
    pub depth: usize,
    pub hidden: usize,
    #[serde(default = "one")]
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub norm: NormMode,
    #[serde(default)]
    pub seed: u64,
}

impl PatchEncoderSpec {
    /// 16×16 patches, depth 7, width 2048 on 256×256 grayscale images.
    pub fn reference(seed: u64) -> Self {
        PatchEncoderSpec {
            patch: 16,
            depth: 7,
            hidden: 2048,
            channels: 1,
            height: 256,
            width: 256,
            norm: NormMode::Batch,
            seed,
        }
    }

    /// Desk-scale default: 4×4 patches, width 64.
    pub fn desk(depth: usize, height: usize, width: usize, seed: u64) -> Self {
        PatchEncoderSpec {
            patch: 4,
            depth,
            hidden: 64,
            channels: 1,
            height,
            width,
            norm: NormMode::Batch,
            seed,
        }
    }

    pub fn patches_per_image(&self) -> usize {
        (self.height / self.patch.max(1)) * (self.width / self.patch.max(1))
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    /// Closed-form parameter count: patch projection, `depth - 1` pointwise
    /// projections (all with biases), a scale and shift for every block but
    /// the last, and one positional row per patch at the last block's input.
    pub fn param_count(&self) -> usize {
        let (q, k, d) = (self.patch_len(), self.hidden, self.depth);
        let projections = q * k + k + (d - 1) * (k * k + k);
        let norms = match self.norm {
            NormMode::Batch => 2 * k * (d - 1),
            NormMode::None => 0,
        };
        let pos_dim = if d == 1 { q } else { k };
        projections + norms + self.patches_per_image() * pos_dim
    }

    fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.depth == 0 || self.hidden == 0 || self.channels == 0 {
            return Err(Error::Config("patch, depth, hidden and channels must be positive".into()));
        }
        if self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(Error::Tensor(instenc_tensor::Error::NotDivisible {
                patch: self.patch,
                height: self.height,
                width: self.width,
            }));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearEncoderSpec {
    pub patch: usize,
    pub out_dim: usize,
    #[serde(default = "one")]
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageEncoderSpec {
    Patch(PatchEncoderSpec),
    Linear(LinearEncoderSpec),
}

impl ImageEncoderSpec {
    pub fn seed(&self) -> u64 {
        match self {
            ImageEncoderSpec::Patch(s) => s.seed,
            ImageEncoderSpec::Linear(s) => s.seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        match &mut s {
            ImageEncoderSpec::Patch(p) => p.seed = seed,
            ImageEncoderSpec::Linear(l) => l.seed = seed,
        }
        s
    }

    /// `[C, H, W]` of one input image.
    pub fn image_shape(&self) -> [usize; 3] {
        match self {
            ImageEncoderSpec::Patch(s) => [s.channels, s.height, s.width],
            ImageEncoderSpec::Linear(s) => [s.channels, s.height, s.width],
        }
    }

    pub fn patch(&self) -> usize {
        match self {
            ImageEncoderSpec::Patch(s) => s.patch,
            ImageEncoderSpec::Linear(s) => s.patch,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ImageEncoderSpec::Patch(s) => s.hidden,
            ImageEncoderSpec::Linear(s) => s.out_dim,
        }
    }

    pub fn patches_per_image(&self) -> usize {
        let [_, h, w] = self.image_shape();
        let p = self.patch().max(1);
        (h / p) * (w / p)
    }
}

/// Column statistics frozen for one normalized block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl NormStats {
    fn of(rows: &Tensor) -> NormStats {
        let (mean, var) = ops::column_stats(rows);
        NormStats {
            mean,
            inv_std: var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect(),
        }
    }
}

/// Where normalization statistics come from during a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Norm<'a> {
    /// Statistics of the rows being encoded, differentiated through.
    Batch,
    /// Frozen statistics, one entry per normalized block.
    Fixed(&'a [NormStats]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EncoderManifest {
    spec: ImageEncoderSpec,
    adversarial: bool,
    norm_stats: Option<Vec<NormStats>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoder {
    spec: ImageEncoderSpec,
    params: ParamStore,
    stats: Option<Vec<NormStats>>,
    adversarial: bool,
}

pub fn build_patch_encoder(spec: &PatchEncoderSpec) -> Result<ImageEncoder> {
    ImageEncoder::build(&ImageEncoderSpec::Patch(spec.clone()))
}

pub fn build_linear_encoder(spec: &LinearEncoderSpec) -> Result<ImageEncoder> {
    ImageEncoder::build(&ImageEncoderSpec::Linear(spec.clone()))
}

fn w_name(i: usize) -> String {
    format!("block{i}.w")
}
fn b_name(i: usize) -> String {
    format!("block{i}.b")
}
fn gamma_name(i: usize) -> String {
    format!("block{i}.gamma")
}
fn beta_name(i: usize) -> String {
    format!("block{i}.beta")
}

impl ImageEncoder {
    pub fn build(spec: &ImageEncoderSpec) -> Result<ImageEncoder> {
        let mut params = ParamStore::new(spec.seed());
        match spec {
            ImageEncoderSpec::Patch(s) => {
                s.validate()?;
                let (q, k) = (s.patch_len(), s.hidden);
                for i in 0..s.depth {
                    let fan = if i == 0 { q } else { k };
                    params.init(&w_name(i), &[fan, k], Init::fan_in(fan))?;
                    params.init(&b_name(i), &[k], Init::Gaussian { mean: 0.0, std: 0.1 })?;
                    if i + 1 < s.depth && s.norm == NormMode::Batch {
                        params.init(&gamma_name(i), &[k], Init::Gaussian { mean: 1.0, std: 0.0 })?;
                        params.init(&beta_name(i), &[k], Init::Gaussian { mean: 0.0, std: 0.0 })?;
                    }
                }
                let pos_dim = if s.depth == 1 { q } else { k };
                params.init("pos", &[s.patches_per_image(), pos_dim], Init::Gaussian { mean: 0.0, std: 1.0 })?;
            }
            ImageEncoderSpec::Linear(s) => {
                if s.patch == 0 || s.out_dim == 0 || s.channels == 0 {
                    return Err(Error::Config("patch, out_dim and channels must be positive".into()));
                }
                if s.height % s.patch != 0 || s.width % s.patch != 0 {
                    return Err(Error::Tensor(instenc_tensor::Error::NotDivisible {
                        patch: s.patch,
                        height: s.height,
                        width: s.width,
                    }));
                }
                let fan = s.channels * s.patch * s.patch;
                params.init("w", &[s.out_dim, s.channels, s.patch, s.patch], Init::fan_in(fan))?;
            }
        }
        Ok(ImageEncoder {
            spec: spec.clone(),
            params,
            stats: None,
            adversarial: false,
        })
    }

    /// Same architecture, independently drawn parameters.
    pub fn fresh(&self, seed: u64) -> Result<ImageEncoder> {
        ImageEncoder::build(&self.spec.with_seed(seed))
    }

    pub fn spec(&self) -> &ImageEncoderSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn norm_stats(&self) -> Option<&[NormStats]> {
        self.stats.as_deref()
    }

    pub fn is_adversarial(&self) -> bool {
        self.adversarial
    }

    pub fn mark_adversarial(&mut self) {
        self.adversarial = true;
    }

    pub fn patches_per_image(&self) -> usize {
        self.spec.patches_per_image()
    }

    pub fn out_dim(&self) -> usize {
        self.spec.out_dim()
    }

    /// Blocks in the forward pass; the linear encoder has one.
    pub fn depth(&self) -> usize {
        match &self.spec {
            ImageEncoderSpec::Patch(s) => s.depth,
            ImageEncoderSpec::Linear(_) => 1,
        }
    }

    fn normalized_blocks(&self) -> usize {
        match &self.spec {
            ImageEncoderSpec::Patch(s) if s.norm == NormMode::Batch => s.depth - 1,
            _ => 0,
        }
    }

    /// Number of images in `x`, after checking the per-image shape.
    pub fn check_images(&self, x: &Tensor) -> Result<usize> {
        let want = self.spec.image_shape();
        match *x.shape() {
            [n, c, h, w] if [c, h, w] == want => Ok(n),
            [c, h, w] if [c, h, w] == want => Ok(1),
            _ => Err(Error::InputShape {
                expected: want.to_vec(),
                got: x.shape().to_vec(),
            }),
        }
    }

    /// Full forward pass from an image batch to patch rows.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, norm: Norm) -> Result<Var> {
        self.check_images(tape.value(x))?;
        if let ImageEncoderSpec::Linear(_) = self.spec {
            let y = tape.conv_nonoverlap(x, bound.get("w")?)?;
            return Ok(tape.channels_last(y)?);
        }
        let mut h = tape.patches(x, self.spec.patch())?;
        for i in 0..self.depth() {
            h = self.forward_block(tape, bound, i, h, norm)?;
        }
        Ok(h)
    }

    /// Block `i` of the patch encoder applied to rows `h`. The first block
    /// takes flattened patches, the others take the previous block's rows.
    pub fn forward_block(&self, tape: &mut Tape, bound: &Bound, i: usize, h: Var, norm: Norm) -> Result<Var> {
        let ImageEncoderSpec::Patch(s) = &self.spec else {
            return Err(Error::Config("the linear encoder has no blocks".into()));
        };
        let last = i + 1 == s.depth;
        let mut h = h;
        if last {
            h = tape.add_tiled(h, bound.get("pos")?)?;
        }
        h = tape.matmul(h, bound.get(&w_name(i))?)?;
        h = tape.add_tiled(h, bound.get(&b_name(i))?)?;
        if !last && s.norm == NormMode::Batch {
            h = match norm {
                Norm::Batch => tape.batch_normalize(h, NORM_EPS)?,
                Norm::Fixed(stats) => {
                    let st = stats.get(i).ok_or(Error::NotCalibrated)?;
                    let shift = tape.leaf(Tensor::vector(st.mean.iter().map(|m| -m).collect()));
                    let scale = tape.leaf(Tensor::vector(st.inv_std.clone()));
                    let c = tape.add_tiled(h, shift)?;
                    tape.mul_tiled(c, scale)?
                }
            };
            h = tape.mul_tiled(h, bound.get(&gamma_name(i))?)?;
            h = tape.add_tiled(h, bound.get(&beta_name(i))?)?;
        }
        Ok(tape.relu(h)?)
    }

    /// Unshuffled patch rows for a batch, using the frozen statistics when
    /// calibrated and the batch's own statistics otherwise.
    pub fn encode_rows(&self, images: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.leaf(images.clone());
        let norm = match &self.stats {
            Some(s) => Norm::Fixed(s),
            None => Norm::Batch,
        };
        let out = self.forward(&mut tape, &bound, x, norm)?;
        Ok(tape.value(out).clone())
    }

    /// Freezes the normalization statistics of `images` (one owner's batch).
    pub fn calibrate(&mut self, images: &Tensor) -> Result<()> {
        let blocks = self.normalized_blocks();
        if blocks == 0 {
            self.stats = Some(Vec::new());
            return Ok(());
        }
        self.check_images(images)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.leaf(images.clone());
        let mut h = tape.patches(x, self.spec.patch())?;
        let mut stats = Vec::with_capacity(blocks);
        for i in 0..blocks {
            let pre = tape.matmul(h, bound.get(&w_name(i))?)?;
            let pre = tape.add_tiled(pre, bound.get(&b_name(i))?)?;
            stats.push(NormStats::of(tape.value(pre)));
            h = self.forward_block(&mut tape, &bound, i, h, Norm::Fixed(&stats))?;
        }
        self.stats = Some(stats);
        Ok(())
    }

    pub fn clear_calibration(&mut self) {
        self.stats = None;
    }

    /// Encodes one image with frozen statistics and returns its patch rows
    /// `[P, K]` in an order drawn from `shuffle_seed`.
    pub fn encode_image(&self, image: &Tensor, shuffle_seed: u64) -> Result<Tensor> {
        if self.check_images(image)? != 1 {
            return Err(Error::InputShape {
                expected: self.spec.image_shape().to_vec(),
                got: image.shape().to_vec(),
            });
        }
        if self.stats.is_none() && self.normalized_blocks() > 0 {
            return Err(Error::NotCalibrated);
        }
        let rows = self.encode_rows(image)?;
        Ok(shuffle_rows(&rows, shuffle_seed))
    }

    /// Encodes every image of an owner batch, each with its own shuffle
    /// derived from `seed`. An uncalibrated encoder is calibrated on the
    /// batch first.
    pub fn encode_batch(&self, images: &Tensor, seed: u64) -> Result<Vec<Tensor>> {
        let n = self.check_images(images)?;
        let calibrated;
        let enc = if self.stats.is_none() {
            let mut e = self.clone();
            e.calibrate(images)?;
            calibrated = e;
            &calibrated
        } else {
            self
        };
        let per = images.len() / n.max(1);
        let [c, h, w] = self.spec.image_shape();
        exec::map_range(n, |i| {
            let img = Tensor::new(vec![1, c, h, w], images.data()[i * per..(i + 1) * per].to_vec())?;
            enc.encode_image(&img, rng::derive_indexed(seed, "shuffle", i as u64))
        })
        .into_iter()
        .collect()
    }

    /// Writes parameters plus an `encoder.json` manifest into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.params.save_dir(dir)?;
        let manifest = EncoderManifest {
            spec: self.spec.clone(),
            adversarial: self.adversarial,
            norm_stats: self.stats.clone(),
        };
        std::fs::write(dir.join("encoder.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<ImageEncoder> {
        let dir = dir.as_ref();
        let manifest: EncoderManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("encoder.json"))?)?;
        let params = ParamStore::load_dir(dir)?;
        let reference = ImageEncoder::build(&manifest.spec)?;
        for (name, t) in reference.params.iter() {
            if params.get(name)?.shape() != t.shape() {
                return Err(Error::Config(format!("parameter `{name}` has the wrong shape")));
            }
        }
        Ok(ImageEncoder {
            spec: manifest.spec,
            params,
            stats: manifest.norm_stats,
            adversarial: manifest.adversarial,
        })
    }
}

/// Rows of `t` in a uniformly random order drawn from `seed`.
pub fn shuffle_rows(t: &Tensor, seed: u64) -> Tensor {
    let mut order: Vec<usize> = (0..t.rows()).collect();
    order.shuffle(&mut rng::rng(seed));
    t.select_rows(&order)
}

/// True when `a` and `b` hold the same rows with the same multiplicities.
pub fn multiset_eq(a: &Tensor, b: &Tensor) -> bool {
    if a.shape() != b.shape() {
        return false;
    }
    let sorted = |t: &Tensor| {
        let mut rows: Vec<&[f64]> = (0..t.rows()).map(|i| t.row(i)).collect();
        rows.sort_by(|x, y| {
            x.iter()
                .zip(y.iter())
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        rows.concat()
    };
    sorted(a) == sorted(b)
}

/// Splits unshuffled rows `[N·P, K]` into one `[P, K]` tensor per sample.
pub fn split_samples(rows: &Tensor, per_sample: usize) -> Result<Vec<Tensor>> {
    if per_sample == 0 || rows.rows() % per_sample != 0 {
        return Err(Error::Config(format!(
            "{} rows do not split into sets of {per_sample}",
            rows.rows()
        )));
    }
    let k = rows.cols();
    Ok(rows
        .data()
        .chunks(per_sample * k)
        .map(|c| Tensor::new(vec![per_sample, k], c.to_vec()).expect("chunk shape"))
        .collect())
}

/// Stacks equal-shape `[P, K]` sets into `[N·P, K]`.
pub fn stack_samples(sets: &[Tensor]) -> Result<Tensor> {
    let first = sets.first().ok_or(Error::TooFewSamples {
        what: "stacking",
        needed: 1,
        got: 0,
    })?;
    let (p, k) = (first.rows(), first.cols());
    let mut data = Vec::with_capacity(sets.len() * p * k);
    for s in sets {
        if s.rows() != p || s.cols() != k {
            return Err(Error::InputShape {
                expected: vec![p, k],
                got: s.shape().to_vec(),
            });
        }
        data.extend_from_slice(s.data());
    }
    Ok(Tensor::new(vec![sets.len() * p, k], data)?)
}

/// Images `indices` of a `[N, C, H, W]` batch.
pub fn select_images(images: &Tensor, indices: &[usize]) -> Tensor {
    images.select_rows(indices)
}

/// Flattened patch rows `[N·P, C·p·p]` of raw images, for raw baselines.
pub fn raw_patch_rows(images: &Tensor, patch: usize) -> Result<Tensor> {
    PatchGrid::of(images, patch)?;
    Ok(ops::patches(images, patch)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RnnOutput {
    FinalState,
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RnnEncoderSpec {
    pub hidden: usize,
    pub vocab: usize,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_embedding_dim() -> usize {
    16
}

/// Where token vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    /// Gaussian table of `vocab × embedding_dim` drawn from the encoder seed.
    Seeded,
    /// A `[vocab, dim]` table, e.g. loaded from a raw tensor file.
    Table(Tensor),
}

/// `h_t = tanh(e(x_t)·W_xh + h_{t-1}·W_hh + b)` from a random `h_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnEncoder {
    embedding: Tensor,
    w_xh: Tensor,
    w_hh: Tensor,
    b: Tensor,
    h0: Tensor,
}

pub fn build_rnn_encoder(spec: &RnnEncoderSpec, source: EmbeddingSource) -> Result<RnnEncoder> {
    if spec.hidden == 0 || spec.vocab == 0 {
        return Err(Error::Config("hidden and vocab must be positive".into()));
    }
    let mut p = ParamStore::new(spec.seed);
    let embedding = match source {
        EmbeddingSource::Seeded => p
            .init("embedding", &[spec.vocab, spec.embedding_dim], Init::Gaussian { mean: 0.0, std: 1.0 })?
            .clone(),
        EmbeddingSource::Table(t) => {
            if t.rank() != 2 || t.rows() != spec.vocab || t.cols() != spec.embedding_dim {
                return Err(Error::InputShape {
                    expected: vec![spec.vocab, spec.embedding_dim],
                    got: t.shape().to_vec(),
                });
            }
            t
        }
    };
    let (e, h) = (spec.embedding_dim, spec.hidden);
    let w_xh = p.init("w_xh", &[e, h], Init::fan_in(e))?.clone();
    let w_hh = p.init("w_hh", &[h, h], Init::fan_in(h))?.clone();
    let b = p.init("b", &[1, h], Init::Gaussian { mean: 0.0, std: 0.1 })?.clone();
    let h0 = p.init("h0", &[1, h], Init::Uniform { low: -1.0, high: 1.0 })?.clone();
    RnnEncoder::from_parts(embedding, w_xh, w_hh, b, h0)
}

impl RnnEncoder {
    /// Shapes: embedding `[V, E]`, `w_xh` `[E, H]`, `w_hh` `[H, H]`, `b` and
    /// `h0` `[1, H]`.
    pub fn from_parts(embedding: Tensor, w_xh: Tensor, w_hh: Tensor, b: Tensor, h0: Tensor) -> Result<RnnEncoder> {
        let (e, h) = (embedding.cols(), w_hh.cols());
        let ok = embedding.rank() == 2
            && w_xh.shape() == [e, h]
            && w_hh.shape() == [h, h]
            && b.shape() == [1, h]
            && h0.shape() == [1, h];
        if !ok {
            return Err(Error::Config(format!(
                "inconsistent recurrent shapes: embedding {:?}, w_xh {:?}, w_hh {:?}, b {:?}, h0 {:?}",
                embedding.shape(),
                w_xh.shape(),
                w_hh.shape(),
                b.shape(),
                h0.shape()
            )));
        }
        Ok(RnnEncoder {
            embedding,
            w_xh,
            w_hh,
            b,
            h0,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn vocab(&self) -> usize {
        self.embedding.rows()
    }

    pub fn initial_state(&self) -> &[f64] {
        self.h0.data()
    }

    /// Final hidden state `[H]` or the state after every token `[T, H]`.
    pub fn encode_text(&self, tokens: &[u32], mode: RnnOutput) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        let hdim = self.hidden();
        let mut h = self.h0.clone();
        let mut states = Vec::with_capacity(tokens.len() * hdim);
        for &t in tokens {
            if t as usize >= self.vocab() {
                return Err(Error::UnknownToken {
                    token: t,
                    vocab: self.vocab(),
                });
            }
            let x = self.embedding.select_rows(&[t as usize]);
            let pre = ops::add(&ops::add(&ops::matmul(&x, &self.w_xh)?, &ops::matmul(&h, &self.w_hh)?)?, &self.b)?;
            h = pre.map(f64::tanh);
            states.extend_from_slice(h.data());
        }
        Ok(match mode {
            RnnOutput::FinalState => Tensor::vector(h.into_data()),
            RnnOutput::Sequence => Tensor::new(vec![tokens.len(), hdim], states)?,
        })
    }
}
