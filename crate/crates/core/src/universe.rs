//! Finite sample universes, owner/public datasets and published observations.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::rng;
use crate::{Error, Result};

/// Feature payload carried by a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Features(Vec<f64>),
    Tokens(Vec<u32>),
}

impl Payload {
    pub fn features(&self) -> Option<&[f64]> {
        match self {
            Payload::Features(f) => Some(f),
            Payload::Tokens(_) => None,
        }
    }

    pub fn tokens(&self) -> Option<&[u32]> {
        match self {
            Payload::Tokens(t) => Some(t),
            Payload::Features(_) => None,
        }
    }
}

/// One row handed to [`build_universe`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub id: String,
    pub payload: Payload,
    pub label: Option<String>,
    pub sensitive: Option<String>,
}

impl SampleSpec {
    pub fn new(id: impl Into<String>, payload: Payload, label: impl Into<String>) -> Self {
        SampleSpec {
            id: id.into(),
            payload,
            label: Some(label.into()),
            sensitive: None,
        }
    }

    pub fn with_sensitive(mut self, s: impl Into<String>) -> Self {
        self.sensitive = Some(s.into());
        self
    }
}

/// A finite, totally ordered sample space with its labeling `L` and an
/// optional sensitive labeling `S`.
///
/// Labels are stored as indices into `label_set`; sample order is the order
/// samples were supplied in, and encoders are tables over that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    ids: Vec<String>,
    payloads: Vec<Payload>,
    labels: Vec<usize>,
    label_set: Vec<String>,
    sensitive: Option<Vec<usize>>,
    sensitive_set: Vec<String>,
    feature_shape: Option<Vec<usize>>,
}

/// Validates rows against a declared label set and assembles a [`Universe`].
///
/// Either every row carries a sensitive label or none does. When
/// `sensitive_set` is `None` but rows carry sensitive labels, the set is
/// taken from the rows in first-appearance order.
pub fn build_universe(
    samples: Vec<SampleSpec>,
    label_set: Vec<String>,
    sensitive_set: Option<Vec<String>>,
) -> Result<Universe> {
    if label_set.is_empty() {
        return Err(Error::InvalidUniverse("label set is empty".into()));
    }
    if let Some(dup) = first_duplicate(&label_set) {
        return Err(Error::InvalidUniverse(format!("label `{dup}` declared twice")));
    }
    let mut seen = BTreeSet::new();
    let mut ids = Vec::with_capacity(samples.len());
    let mut payloads = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let mut sensitive_raw = Vec::with_capacity(samples.len());
    for (index, s) in samples.into_iter().enumerate() {
        if !seen.insert(s.id.clone()) {
            return Err(Error::DuplicateSample(s.id));
        }
        let label = s.label.ok_or(Error::MissingLabel { index })?;
        let label = label_set.iter().position(|l| *l == label).ok_or_else(|| {
            Error::InvalidUniverse(format!("label `{label}` of sample {index} is not declared"))
        })?;
        ids.push(s.id);
        payloads.push(s.payload);
        labels.push(label);
        sensitive_raw.push(s.sensitive);
    }

    let with_s = sensitive_raw.iter().filter(|s| s.is_some()).count();
    let (sensitive, sensitive_set) = if with_s == 0 {
        (None, sensitive_set.unwrap_or_default())
    } else if with_s != sensitive_raw.len() {
        return Err(Error::InvalidUniverse(
            "sensitive labels must be given for every sample or for none".into(),
        ));
    } else {
        let mut set = sensitive_set.unwrap_or_default();
        let mut out = Vec::with_capacity(sensitive_raw.len());
        let declared = !set.is_empty();
        for (index, s) in sensitive_raw.into_iter().enumerate() {
            let s = s.expect("checked above");
            let pos = match set.iter().position(|x| *x == s) {
                Some(p) => p,
                None if declared => {
                    return Err(Error::InvalidUniverse(format!(
                        "sensitive label `{s}` of sample {index} is not declared"
                    )))
                }
                None => {
                    set.push(s);
                    set.len() - 1
                }
            };
            out.push(pos);
        }
        (Some(out), set)
    };

    Ok(Universe {
        ids,
        payloads,
        labels,
        label_set,
        sensitive,
        sensitive_set,
        feature_shape: None,
    })
}

fn first_duplicate(xs: &[String]) -> Option<&String> {
    let mut seen = BTreeSet::new();
    xs.iter().find(|x| !seen.insert(x.as_str()))
}

impl Universe {
    /// Scalar universe with ids `"1"`, `"2"`, ... and the given one-dimensional
    /// values and labels. The label set is taken in first-appearance order.
    pub fn scalar(values: &[f64], labels: &[&str]) -> Result<Universe> {
        if values.len() != labels.len() {
            return Err(Error::InvalidUniverse(format!(
                "{} payloads but {} labels",
                values.len(),
                labels.len()
            )));
        }
        let mut label_set: Vec<String> = Vec::new();
        for l in labels {
            if !label_set.iter().any(|x| x == l) {
                label_set.push((*l).to_string());
            }
        }
        let samples = values
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&v, &l))| SampleSpec::new((i + 1).to_string(), Payload::Features(vec![v]), l))
            .collect();
        build_universe(samples, label_set, None)
    }

    /// Universe whose samples carry no payload beyond their index; handy for
    /// exact-scale experiments where only the labeling matters.
    pub fn from_labels(labels: &[usize], label_count: usize) -> Result<Universe> {
        let label_set: Vec<String> = (0..label_count).map(|l| l.to_string()).collect();
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                SampleSpec::new((i + 1).to_string(), Payload::Features(vec![(i + 1) as f64]), l.to_string())
            })
            .collect();
        build_universe(samples, label_set, None)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn payloads(&self) -> &[Payload] {
        &self.payloads
    }

    pub fn payload(&self, i: usize) -> &Payload {
        &self.payloads[i]
    }

    /// Label index of every sample, in universe order.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn label_count(&self) -> usize {
        self.label_set.len()
    }

    pub fn sensitive_labels(&self) -> Option<&[usize]> {
        self.sensitive.as_deref()
    }

    pub fn sensitive_set(&self) -> &[String] {
        &self.sensitive_set
    }

    pub fn feature_shape(&self) -> Option<&[usize]> {
        self.feature_shape.as_deref()
    }

    pub fn with_feature_shape(mut self, shape: Vec<usize>) -> Result<Self> {
        let want: usize = shape.iter().product();
        for (i, p) in self.payloads.iter().enumerate() {
            match p {
                Payload::Features(f) if f.len() == want => {}
                _ => {
                    return Err(Error::InvalidUniverse(format!(
                        "sample {i} does not match feature shape {shape:?}"
                    )))
                }
            }
        }
        self.feature_shape = Some(shape);
        Ok(self)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Restriction of the universe to `indices`, keeping their order.
    pub fn subset(&self, indices: &[usize]) -> Universe {
        Universe {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            payloads: indices.iter().map(|&i| self.payloads[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_set: self.label_set.clone(),
            sensitive: self
                .sensitive
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
            sensitive_set: self.sensitive_set.clone(),
            feature_shape: self.feature_shape.clone(),
        }
    }

    pub fn to_json(&self) -> Value {
        let samples: Vec<Value> = (0..self.len())
            .map(|i| {
                let mut m = serde_json::Map::new();
                m.insert("id".into(), Value::String(self.ids[i].clone()));
                match &self.payloads[i] {
                    Payload::Features(f) => m.insert("features".into(), serde_json::json!(f)),
                    Payload::Tokens(t) => m.insert("tokens".into(), serde_json::json!(t)),
                };
                m.insert("label".into(), Value::String(self.label_set[self.labels[i]].clone()));
                if let Some(s) = &self.sensitive {
                    m.insert("sensitive".into(), Value::String(self.sensitive_set[s[i]].clone()));
                }
                Value::Object(m)
            })
            .collect();
        let mut doc = serde_json::Map::new();
        doc.insert("samples".into(), Value::Array(samples));
        doc.insert("label_set".into(), serde_json::json!(self.label_set));
        if self.sensitive.is_some() {
            doc.insert("sensitive_set".into(), serde_json::json!(self.sensitive_set));
        }
        if let Some(shape) = &self.feature_shape {
            doc.insert("feature_shape".into(), serde_json::json!(shape));
        }
        Value::Object(doc)
    }

    pub fn from_json(doc: &Value) -> Result<Universe> {
        let raw: UniverseDoc = serde_json::from_value(doc.clone())?;
        let samples = raw
            .samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let payload = match (s.features, s.tokens) {
                    (Some(f), None) => Payload::Features(f),
                    (None, Some(t)) => Payload::Tokens(t),
                    (None, None) => Payload::Features(Vec::new()),
                    (Some(_), Some(_)) => {
                        return Err(Error::InvalidUniverse(format!(
                            "sample {i} has both features and tokens"
                        )))
                    }
                };
                Ok(SampleSpec {
                    id: scalar_string(&s.id).unwrap_or_else(|| (i + 1).to_string()),
                    payload,
                    label: s.label.as_ref().and_then(scalar_string),
                    sensitive: s.sensitive.as_ref().and_then(scalar_string),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let label_set = raw.label_set.iter().filter_map(scalar_string).collect();
        let sensitive_set = raw
            .sensitive_set
            .map(|s| s.iter().filter_map(scalar_string).collect());
        let u = build_universe(samples, label_set, sensitive_set)?;
        match raw.feature_shape {
            Some(shape) => u.with_feature_shape(shape),
            None => Ok(u),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UniverseDoc {
    samples: Vec<SampleDoc>,
    label_set: Vec<Value>,
    #[serde(default)]
    sensitive_set: Option<Vec<Value>>,
    #[serde(default)]
    feature_shape: Option<Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleDoc {
    #[serde(default)]
    id: Value,
    #[serde(default)]
    features: Option<Vec<f64>>,
    #[serde(default)]
    tokens: Option<Vec<u32>>,
    #[serde(default)]
    label: Option<Value>,
    #[serde(default)]
    sensitive: Option<Value>,
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// A data owner's private sample set `X_A`, as sorted universe indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerDataset {
    pub owner_id: u32,
    indices: Vec<usize>,
}

impl OwnerDataset {
    pub fn new(owner_id: u32, universe: &Universe, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        check_indices(&indices, universe.len())?;
        Ok(OwnerDataset { owner_id, indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Role a [`PublicDataset`] plays in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PublicRole {
    /// The adversary's prior knowledge `P`, with `L` and `S` known.
    Public,
    /// Held-out evaluation set.
    HeldOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicDataset {
    pub role: PublicRole,
    indices: Vec<usize>,
}

impl PublicDataset {
    pub fn new(role: PublicRole, universe: &Universe, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        check_indices(&indices, universe.len())?;
        Ok(PublicDataset { role, indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Errors when the public set shares a sample with `owner`.
    pub fn check_disjoint(&self, owner: &OwnerDataset) -> Result<()> {
        let (mut i, mut j) = (0, 0);
        while i < self.indices.len() && j < owner.indices.len() {
            match self.indices[i].cmp(&owner.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    return Err(Error::InvalidUniverse(format!(
                        "sample {} is in both the public set and owner {}'s dataset",
                        self.indices[i], owner.owner_id
                    )))
                }
            }
        }
        Ok(())
    }
}

fn check_indices(sorted: &[usize], universe_len: usize) -> Result<()> {
    if let Some(&bad) = sorted.iter().find(|&&i| i >= universe_len) {
        return Err(Error::InvalidUniverse(format!(
            "index {bad} outside a universe of {universe_len} samples"
        )));
    }
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidUniverse("dataset repeats a sample".into()));
    }
    Ok(())
}

/// Draws a uniformly random `n`-subset of the universe (every subset of size
/// `n` equally likely), deterministically from `seed`.
pub fn sample_owner_dataset(universe: &Universe, n: usize, seed: u64) -> Result<OwnerDataset> {
    sample_owner_dataset_for(0, universe, n, seed)
}

pub fn sample_owner_dataset_for(
    owner_id: u32,
    universe: &Universe,
    n: usize,
    seed: u64,
) -> Result<OwnerDataset> {
    if n > universe.len() {
        return Err(Error::SampleCount {
            requested: n,
            available: universe.len(),
        });
    }
    let mut r = rng::rng(seed);
    let indices = sample(&mut r, universe.len(), n).into_vec();
    OwnerDataset::new(owner_id, universe, indices)
}

/// The published multiset `{(T(x), L(x))}` of encoded symbols and labels.
///
/// Pairs are kept sorted, so two observations compare equal exactly when
/// they hold the same pairs with the same multiplicities.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Vec<(u32, usize)>", into = "Vec<(u32, usize)>")]
pub struct Observation {
    pairs: Vec<(u32, usize)>,
}

impl From<Vec<(u32, usize)>> for Observation {
    fn from(pairs: Vec<(u32, usize)>) -> Self {
        Observation::new(pairs)
    }
}

impl From<Observation> for Vec<(u32, usize)> {
    fn from(o: Observation) -> Self {
        o.pairs
    }
}

impl Observation {
    pub fn new(mut pairs: Vec<(u32, usize)>) -> Self {
        pairs.sort_unstable();
        Observation { pairs }
    }

    pub fn empty() -> Self {
        Observation { pairs: Vec::new() }
    }

    pub fn pairs(&self) -> &[(u32, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// True when some encoded symbol appears twice; no injective encoder can
    /// produce such an observation.
    pub fn has_repeated_symbol(&self) -> bool {
        self.pairs.windows(2).any(|w| w[0].0 == w[1].0)
    }
}

/// Publishes `{(T(x), L(x))}` for the owner's samples.
pub fn make_observation(
    universe: &Universe,
    encoder: &crate::TableEncoder,
    owner: &OwnerDataset,
) -> Result<Observation> {
    if encoder.len() != universe.len() {
        return Err(Error::EncoderDomain {
            encoder: encoder.len(),
            universe: universe.len(),
        });
    }
    Ok(observe(encoder.mapping(), universe.labels(), owner.indices()))
}

pub(crate) fn observe(mapping: &[u32], labels: &[usize], indices: &[usize]) -> Observation {
    Observation::new(indices.iter().map(|&i| (mapping[i], labels[i])).collect())
}
