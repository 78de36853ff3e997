//! Table encoders and weighted encoder families.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::rng;
use crate::universe::Universe;
use crate::{Error, Result};

/// Largest family [`permutation_family`] will materialize (8!).
pub const MAX_ENUMERATED_FAMILY: usize = 40_320;

const WEIGHT_TOLERANCE: f64 = 1e-12;
const ABSENT: u32 = u32::MAX;

/// An injective map from universe positions to codomain symbols, stored as
/// the vector `(T(x_1), ..., T(x_|X|))`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct TableEncoder {
    mapping: Vec<u32>,
}

impl TryFrom<Vec<u32>> for TableEncoder {
    type Error = Error;

    fn try_from(mapping: Vec<u32>) -> Result<Self> {
        TableEncoder::new(mapping)
    }
}

impl From<TableEncoder> for Vec<u32> {
    fn from(t: TableEncoder) -> Self {
        t.mapping
    }
}

impl TableEncoder {
    pub fn new(mapping: Vec<u32>) -> Result<Self> {
        let mut sorted = mapping.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::NotInjective { symbol: w[0] });
        }
        if sorted.last() == Some(&ABSENT) {
            return Err(Error::InvalidFamily("symbol u32::MAX is reserved".into()));
        }
        Ok(TableEncoder { mapping })
    }

    /// Builds from the 1-based tables used in hand-written examples, e.g.
    /// `(2,1,3,4)` swaps the first two samples.
    pub fn from_one_based(table: &[u32]) -> Result<Self> {
        if table.contains(&0) {
            return Err(Error::InvalidFamily("1-based table contains 0".into()));
        }
        TableEncoder::new(table.iter().map(|&s| s - 1).collect())
    }

    pub fn identity(n: usize) -> Self {
        TableEncoder {
            mapping: (0..n as u32).collect(),
        }
    }

    pub fn mapping(&self) -> &[u32] {
        &self.mapping
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn apply(&self, index: usize) -> u32 {
        self.mapping[index]
    }

    /// Smallest codomain size that holds every symbol of the table.
    pub fn min_codomain(&self) -> usize {
        self.mapping.iter().max().map_or(0, |&m| m as usize + 1)
    }

    /// `outer ∘ self`, with `self`'s symbols read as positions in `outer`'s
    /// domain.
    pub fn then(&self, outer: &TableEncoder) -> Result<TableEncoder> {
        if self.min_codomain() > outer.len() {
            return Err(Error::CompositionMismatch {
                inner_codomain: self.min_codomain(),
                outer_domain: outer.len(),
            });
        }
        Ok(TableEncoder {
            mapping: self.mapping.iter().map(|&s| outer.mapping[s as usize]).collect(),
        })
    }

    fn inverse(&self, codomain: usize) -> Vec<u32> {
        let mut inv = vec![ABSENT; codomain];
        for (i, &s) in self.mapping.iter().enumerate() {
            inv[s as usize] = i as u32;
        }
        inv
    }
}

/// A key distribution `Pr[T_A = T]`; the family `F` is its support.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderFamily {
    encoders: Vec<TableEncoder>,
    weights: Vec<f64>,
    codomain_size: usize,
    inverses: Vec<Vec<u32>>,
}

/// Validates and assembles a family. The codomain is the smallest symbol
/// range covering every table, but never smaller than the domain, so
/// permutation families get `Z = X`.
pub fn make_family(encoders: Vec<TableEncoder>, weights: Vec<f64>) -> Result<EncoderFamily> {
    let codomain = encoders
        .iter()
        .map(TableEncoder::min_codomain)
        .chain(encoders.first().map(TableEncoder::len))
        .max()
        .unwrap_or(0);
    EncoderFamily::with_codomain(encoders, weights, codomain)
}

impl EncoderFamily {
    pub fn with_codomain(
        encoders: Vec<TableEncoder>,
        weights: Vec<f64>,
        codomain_size: usize,
    ) -> Result<Self> {
        if encoders.is_empty() {
            return Err(Error::InvalidFamily("family is empty".into()));
        }
        if encoders.len() != weights.len() {
            return Err(Error::InvalidFamily(format!(
                "{} encoders but {} weights",
                encoders.len(),
                weights.len()
            )));
        }
        let domain = encoders[0].len();
        if let Some(bad) = encoders.iter().find(|e| e.len() != domain) {
            return Err(Error::InvalidFamily(format!(
                "encoder tables have lengths {domain} and {}",
                bad.len()
            )));
        }
        if let Some(bad) = encoders.iter().find(|e| e.min_codomain() > codomain_size) {
            return Err(Error::InvalidFamily(format!(
                "encoder uses symbol {} outside a codomain of {codomain_size}",
                bad.min_codomain() - 1
            )));
        }
        check_weights(&weights)?;
        let mut seen: HashMap<&TableEncoder, usize> = HashMap::with_capacity(encoders.len());
        for (i, e) in encoders.iter().enumerate() {
            if let Some(&first) = seen.get(e) {
                return Err(Error::DuplicateEncoder { first, second: i });
            }
            seen.insert(e, i);
        }
        let inverses = encoders.iter().map(|e| e.inverse(codomain_size)).collect();
        Ok(EncoderFamily {
            encoders,
            weights,
            codomain_size,
            inverses,
        })
    }

    pub fn uniform(encoders: Vec<TableEncoder>) -> Result<Self> {
        let w = uniform_weights(encoders.len());
        make_family(encoders, w)
    }

    pub fn singleton(encoder: TableEncoder) -> Self {
        make_family(vec![encoder], vec![1.0]).expect("a single injective encoder is a valid family")
    }

    pub fn len(&self) -> usize {
        self.encoders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoders.is_empty()
    }

    pub fn encoders(&self) -> &[TableEncoder] {
        &self.encoders
    }

    pub fn encoder(&self, i: usize) -> &TableEncoder {
        &self.encoders[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain_size(&self) -> usize {
        self.encoders[0].len()
    }

    pub fn codomain_size(&self) -> usize {
        self.codomain_size
    }

    /// Universe position that encoder `i` maps to `symbol`, if any.
    pub fn preimage(&self, i: usize, symbol: u32) -> Option<usize> {
        match self.inverses[i].get(symbol as usize) {
            Some(&p) if p != ABSENT => Some(p as usize),
            _ => None,
        }
    }

    pub fn position(&self, encoder: &TableEncoder) -> Option<usize> {
        self.encoders.iter().position(|e| e == encoder)
    }

    pub(crate) fn check_universe(&self, universe: &Universe) -> Result<()> {
        if self.domain_size() != universe.len() {
            return Err(Error::EncoderDomain {
                encoder: self.domain_size(),
                universe: universe.len(),
            });
        }
        Ok(())
    }

    pub fn to_doc(&self) -> FamilyDoc {
        FamilyDoc {
            codomain_size: Some(self.codomain_size),
            index_base: 0,
            encoders: self
                .encoders
                .iter()
                .zip(&self.weights)
                .map(|(e, &w)| EncoderDoc {
                    mapping: e.mapping.clone(),
                    weight: Some(w),
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &FamilyDoc) -> Result<Self> {
        if doc.index_base > 1 {
            return Err(Error::InvalidFamily("index_base must be 0 or 1".into()));
        }
        let encoders = doc
            .encoders
            .iter()
            .map(|e| {
                if doc.index_base == 1 {
                    TableEncoder::from_one_based(&e.mapping)
                } else {
                    TableEncoder::new(e.mapping.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = match doc.encoders.iter().map(|e| e.weight).collect::<Option<Vec<f64>>>() {
            Some(w) => w,
            None if doc.encoders.iter().all(|e| e.weight.is_none()) => uniform_weights(encoders.len()),
            None => {
                return Err(Error::InvalidFamily(
                    "either every encoder has a weight or none does".into(),
                ))
            }
        };
        match doc.codomain_size {
            Some(c) => EncoderFamily::with_codomain(encoders, weights, c),
            None => make_family(encoders, weights),
        }
    }
}

/// JSON form of a family: mapping vectors with weights. Weights may be
/// omitted altogether for a uniform family; `index_base: 1` reads the tables
/// 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codomain_size: Option<usize>,
    #[serde(default)]
    pub index_base: u32,
    pub encoders: Vec<EncoderDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderDoc {
    pub mapping: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub(crate) fn check_weights(weights: &[f64]) -> Result<()> {
    let sum = exec::tree_sum(weights);
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) || (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::InvalidWeights { sum });
    }
    Ok(())
}

/// Draws an encoder index with probability equal to its weight.
pub fn sample_encoder_index(family: &EncoderFamily, seed: u64) -> usize {
    let u: f64 = rng::rng(seed).random();
    let mut acc = 0.0;
    for (i, w) in family.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    family.len() - 1
}

pub fn sample_encoder(family: &EncoderFamily, seed: u64) -> &TableEncoder {
    &family.encoders[sample_encoder_index(family, seed)]
}

/// The family `{T' ∘ T}` with `Pr[T''] = Σ_{T'∘T = T''} Pr[T'] Pr[T]`.
///
/// Composites are listed outer-major (all `T'_1 ∘ T`, then `T'_2 ∘ T`, ...),
/// keeping the first occurrence of each distinct table.
pub fn compose_families(inner: &EncoderFamily, outer: &EncoderFamily) -> Result<EncoderFamily> {
    if inner.codomain_size != outer.domain_size() {
        return Err(Error::CompositionMismatch {
            inner_codomain: inner.codomain_size,
            outer_domain: outer.domain_size(),
        });
    }
    let n_inner = inner.len();
    let composites = exec::map_range(outer.len() * n_inner, |k| {
        let (o, i) = (k / n_inner, k % n_inner);
        let table = inner.encoders[i]
            .then(&outer.encoders[o])
            .expect("codomain checked above");
        (table, outer.weights[o] * inner.weights[i])
    });

    let mut index: HashMap<TableEncoder, usize> = HashMap::new();
    let mut encoders = Vec::new();
    let mut masses: Vec<Vec<f64>> = Vec::new();
    for (table, w) in composites {
        match index.get(&table) {
            Some(&at) => masses[at].push(w),
            None => {
                index.insert(table.clone(), encoders.len());
                encoders.push(table);
                masses.push(vec![w]);
            }
        }
    }
    let weights = masses.iter().map(|m| exec::tree_sum(m)).collect();
    EncoderFamily::with_codomain(encoders, weights, outer.codomain_size)
}

/// Adds encoders to a family and installs a new key distribution over the
/// union. With `new_weights = None` the old weights are kept when nothing is
/// added and the union is made uniform otherwise.
pub fn grow_family(
    family: &EncoderFamily,
    extra: Vec<TableEncoder>,
    new_weights: Option<Vec<f64>>,
) -> Result<EncoderFamily> {
    let added = !extra.is_empty();
    let mut encoders = family.encoders.clone();
    encoders.extend(extra);
    let weights = match new_weights {
        Some(w) => w,
        None if added => uniform_weights(encoders.len()),
        None => family.weights.clone(),
    };
    let codomain = encoders
        .iter()
        .map(TableEncoder::min_codomain)
        .max()
        .unwrap_or(0)
        .max(family.codomain_size);
    EncoderFamily::with_codomain(encoders, weights, codomain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationKind {
    All,
    /// Permutations mapping every label class onto itself.
    LabelPreserving,
}

/// Uniform family over permutations of the universe, in lexicographic table
/// order (identity first).
pub fn permutation_family(universe: &Universe, kind: PermutationKind) -> Result<EncoderFamily> {
    let n = universe.len();
    if n == 0 {
        return Err(Error::InvalidFamily("universe is empty".into()));
    }
    let mut tables: Vec<Vec<u32>> = match kind {
        PermutationKind::All => {
            let count = factorial_capped(n);
            if count > MAX_ENUMERATED_FAMILY {
                return Err(Error::FamilyTooLarge(format!("{n}! permutations")));
            }
            let mut out = Vec::with_capacity(count);
            let mut p: Vec<u32> = (0..n as u32).collect();
            loop {
                out.push(p.clone());
                if !next_permutation(&mut p) {
                    break;
                }
            }
            out
        }
        PermutationKind::LabelPreserving => {
            let classes: Vec<Vec<u32>> = (0..universe.label_count())
                .map(|l| {
                    (0..n as u32)
                        .filter(|&i| universe.labels()[i as usize] == l)
                        .collect::<Vec<u32>>()
                })
                .filter(|c| !c.is_empty())
                .collect();
            let count = classes
                .iter()
                .try_fold(1usize, |acc, c| acc.checked_mul(factorial_capped(c.len())))
                .unwrap_or(usize::MAX);
            if count > MAX_ENUMERATED_FAMILY {
                return Err(Error::FamilyTooLarge(format!("{count} label-preserving permutations")));
            }
            let mut out = vec![vec![0u32; n]];
            for class in &classes {
                let mut perm = class.clone();
                let mut class_perms = Vec::new();
                loop {
                    class_perms.push(perm.clone());
                    if !next_permutation(&mut perm) {
                        break;
                    }
                }
                out = out
                    .into_iter()
                    .flat_map(|table| {
                        class_perms.iter().map(move |cp| {
                            let mut t = table.clone();
                            for (&src, &dst) in class.iter().zip(cp) {
                                t[src as usize] = dst;
                            }
                            t
                        })
                    })
                    .collect();
            }
            out
        }
    };
    tables.sort_unstable();
    let encoders = tables.into_iter().map(|mapping| TableEncoder { mapping }).collect();
    EncoderFamily::uniform(encoders)
}

/// A family of `size` distinct random injective tables `domain -> codomain`
/// with random positive weights, deterministic in `seed`. Fewer tables are
/// returned when the space of injections is smaller than `size`.
pub fn random_family(domain: usize, codomain: usize, size: usize, seed: u64) -> Result<EncoderFamily> {
    use rand::seq::index::sample;
    if domain == 0 || codomain < domain || size == 0 {
        return Err(Error::InvalidFamily(format!(
            "cannot draw {size} injections from {domain} into {codomain} symbols"
        )));
    }
    let mut r = rng::rng(seed);
    let mut tables = Vec::with_capacity(size);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..size.saturating_mul(16) {
        let t: Vec<u32> = sample(&mut r, codomain, domain).into_iter().map(|s| s as u32).collect();
        if seen.insert(t.clone()) {
            tables.push(TableEncoder { mapping: t });
            if tables.len() == size {
                break;
            }
        }
    }
    let raw: Vec<f64> = tables.iter().map(|_| r.random::<f64>() + 0.05).collect();
    let total = exec::tree_sum(&raw);
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    // absorb rounding so the weights pass the 1e-12 sum check
    let drift = 1.0 - exec::tree_sum(&weights);
    weights[0] += drift;
    EncoderFamily::with_codomain(tables, weights, codomain)
}

fn factorial_capped(n: usize) -> usize {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k)).unwrap_or(usize::MAX)
}

/// Advances `p` to the next lexicographic permutation; false at the last one.
pub(crate) fn next_permutation<T: Ord>(p: &mut [T]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
