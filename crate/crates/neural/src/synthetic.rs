//! Seeded synthetic datasets: small two-class grayscale images with a
//! correlated sensitive attribute, and token sequences for the recurrent
//! encoder.

use instenc_core::rng;
use instenc_tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Images built from 4×4 stroke tiles on a dim background. The class sets
/// which strokes are likely; the sensitive attribute raises or lowers the
/// background by `sensitive_offset`, tilts a whole-image ramp by
/// `sensitive_ramp`, and agrees with the class with probability
/// `sensitive_agreement`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageTaskSpec {
    pub side: usize,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_label_noise")]
    pub label_noise: f64,
    #[serde(default = "default_agreement")]
    pub sensitive_agreement: f64,
    #[serde(default = "default_offset")]
    pub sensitive_offset: f64,
    #[serde(default = "default_ramp")]
    pub sensitive_ramp: f64,
    /// Probability moved from the frame stroke to the blob stroke (or back
    /// when the attribute is 0).
    #[serde(default)]
    pub sensitive_strokes: f64,
    #[serde(default = "default_noise")]
    pub pixel_noise: f64,
    /// Added to every pixel before clamping; lets two owners differ.
    #[serde(default)]
    pub brightness_shift: f64,
}

fn default_label_noise() -> f64 {
    0.1
}
fn default_agreement() -> f64 {
    0.7
}
fn default_offset() -> f64 {
    0.05
}
fn default_ramp() -> f64 {
    0.0
}
fn default_noise() -> f64 {
    0.05
}

impl ImageTaskSpec {
    pub fn new(side: usize, count: usize, seed: u64) -> Self {
        ImageTaskSpec {
            side,
            count,
            seed,
            label_noise: default_label_noise(),
            sensitive_agreement: default_agreement(),
            sensitive_offset: default_offset(),
            sensitive_ramp: default_ramp(),
            sensitive_strokes: 0.0,
            pixel_noise: default_noise(),
            brightness_shift: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImages {
    /// `[N, 1, side, side]`, values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub sensitive: Vec<usize>,
}

impl SyntheticImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> SyntheticImages {
        SyntheticImages {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            sensitive: indices.iter().map(|&i| self.sensitive[i]).collect(),
        }
    }
}

const TILE: usize = 4;

/// Stroke tiles: horizontal bar, vertical bar, diagonal, anti-diagonal,
/// centre blob, hollow frame. Every tile is shaded brighter towards its
/// bottom-right so that no flip or rotation maps the tile set to itself.
fn tiles() -> [[f64; TILE * TILE]; 6] {
    let mut t = [[0.0; TILE * TILE]; 6];
    for i in 0..TILE {
        for j in 0..TILE {
            let k = i * TILE + j;
            t[0][k] = if i == 1 || i == 2 { 1.0 } else { 0.0 };
            t[1][k] = if j == 1 || j == 2 { 1.0 } else { 0.0 };
            t[2][k] = if i == j { 1.0 } else if i.abs_diff(j) == 1 { 0.4 } else { 0.0 };
            t[3][k] = if i + j == TILE - 1 { 1.0 } else if (i + j).abs_diff(TILE - 1) == 1 { 0.4 } else { 0.0 };
            t[4][k] = if (1..3).contains(&i) && (1..3).contains(&j) { 1.0 } else { 0.2 };
            t[5][k] = if i == 0 || j == 0 || i == TILE - 1 || j == TILE - 1 { 0.8 } else { 0.0 };
            let shade = 0.4 + 0.15 * i as f64 + 0.05 * j as f64;
            for tile in t.iter_mut() {
                tile[k] *= shade;
            }
        }
    }
    t
}

/// Tile probabilities per class.
const CLASS_TILES: [[f64; 6]; 2] = [
    [0.30, 0.05, 0.25, 0.05, 0.15, 0.20],
    [0.05, 0.30, 0.05, 0.25, 0.20, 0.15],
];

fn pick(r: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn image_task(spec: &ImageTaskSpec) -> SyntheticImages {
    let s = spec.side;
    let tiles = tiles();
    let mut r = rng::rng(spec.seed);
    let mut data = Vec::with_capacity(spec.count * s * s);
    let mut labels = Vec::with_capacity(spec.count);
    let mut sensitive = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let class = r.random_range(0..2usize);
        let sens = if r.random::<f64>() < spec.sensitive_agreement { class } else { 1 - class };
        let shift = if sens == 1 { spec.sensitive_offset } else { -spec.sensitive_offset };
        let base = 0.1 + 0.2 * r.random::<f64>() + shift;
        let mut img = vec![base; s * s];
        let mut probs = CLASS_TILES[class];
        let moved = if sens == 1 { spec.sensitive_strokes } else { -spec.sensitive_strokes };
        probs[4] += moved;
        probs[5] -= moved;
        for by in 0..s / TILE {
            for bx in 0..s / TILE {
                let k = pick(&mut r, &probs);
                let amp = 0.4 + 0.4 * r.random::<f64>();
                for i in 0..TILE {
                    for j in 0..TILE {
                        img[(by * TILE + i) * s + bx * TILE + j] += amp * tiles[k][i * TILE + j];
                    }
                }
            }
        }
        let tilt = if sens == 1 { spec.sensitive_ramp } else { -spec.sensitive_ramp };
        for i in 0..s {
            for j in 0..s {
                let ramp = (i + j) as f64 / (2 * (s - 1).max(1)) as f64 - 0.5;
                let noise: f64 = r.sample(StandardNormal);
                let v = img[i * s + j] + tilt * ramp + spec.pixel_noise * noise + spec.brightness_shift;
                img[i * s + j] = v.clamp(0.0, 1.0);
            }
        }
        data.extend(img);
        let flip = r.random::<f64>() < spec.label_noise;
        labels.push(if flip { 1 - class } else { class });
        sensitive.push(sens);
    }
    SyntheticImages {
        images: Tensor::new(vec![spec.count, 1, s, s], data).expect("image buffer"),
        labels,
        sensitive,
    }
}

/// Token sequences over `vocab` symbols; the first quarter of the
/// vocabulary is over-represented in class 1. Lengths are uniform in
/// `min_len..=max_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenTaskSpec {
    pub vocab: usize,
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    #[serde(default)]
    pub seed: u64,
}

pub fn token_task(spec: &TokenTaskSpec) -> Vec<(Vec<u32>, usize)> {
    let mut r = rng::rng(spec.seed);
    let marked = (spec.vocab / 4).max(1);
    (0..spec.count)
        .map(|_| {
            let class = r.random_range(0..2usize);
            let len = r.random_range(spec.min_len..=spec.max_len.max(spec.min_len));
            let p_marked = if class == 1 { 0.5 } else { 0.15 };
            let toks = (0..len)
                .map(|_| {
                    if r.random::<f64>() < p_marked {
                        r.random_range(0..marked) as u32
                    } else {
                        r.random_range(marked..spec.vocab.max(marked + 1)) as u32
                    }
                })
                .collect();
            (toks, class)
        })
        .collect()
}
