//! Posteriors, MAP attacks and exact privacy/utility scores.
//!
//! Every score enumerates the joint space of (encoder, owner dataset[,
//! labeling]) outcomes, groups the outcomes by the observation they publish
//! and sums `Pr[O] * H[. | O]`. Outcomes are produced with [`exec::map`] and
//! sorted before grouping, so the reduction order never depends on the
//! worker count.

use std::cmp::Ordering;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::entropy::{cross_entropy_bits, entropy_bits, kl_bits};
use crate::exec::{self, tree_sum};
use crate::families::{check_weights, compose_families, uniform_weights, EncoderFamily};
use crate::rng;
use crate::universe::{observe, Observation, OwnerDataset, Universe};
use crate::{Error, Result};

pub const DEFAULT_BUDGET: u128 = 10_000_000;

const TIE_TOLERANCE: f64 = 1e-12;
const DISTRIBUTION_TOLERANCE: f64 = 1e-9;
const IDENTITY_TOLERANCE: f64 = 1e-10;
const MAX_LABELINGS: u128 = 1 << 20;
const ABSENT: u32 = u32::MAX;

/// Cap on the number of enumerated outcomes a score may visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Budget(pub u128);

impl Default for Budget {
    fn default() -> Self {
        Budget(DEFAULT_BUDGET)
    }
}

impl Budget {
    pub fn check(self, cost: u128) -> Result<()> {
        if cost > self.0 {
            Err(Error::BudgetExceeded {
                cost,
                budget: self.0,
            })
        } else {
            Ok(())
        }
    }
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Calls `f` on every `k`-subset of `0..n` in lexicographic order.
pub fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        f(&c);
        let mut i = k;
        while i > 0 && c[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        c[i - 1] += 1;
        for j in i..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for_each_combination(n, k, |c| out.push(c.to_vec()));
    out
}

/// `P(T) = Pr[T_A = T | O, K_e]` over the family's encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    probs: Vec<f64>,
}

impl Posterior {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Encoder indices with nonzero posterior mass, i.e. `Pos[T_A]`.
    pub fn support(&self) -> Vec<usize> {
        (0..self.probs.len()).filter(|&i| self.probs[i] > 0.0).collect()
    }

    pub fn entropy_bits(&self) -> f64 {
        entropy_bits(&self.probs)
    }
}

/// The adversary's belief `Q(T)` over the family's encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MismatchedDistribution {
    probs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for MismatchedDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        MismatchedDistribution::new(probs)
    }
}

impl From<MismatchedDistribution> for Vec<f64> {
    fn from(q: MismatchedDistribution) -> Self {
        q.probs
    }
}

impl MismatchedDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_distribution(&probs)?;
        Ok(MismatchedDistribution { probs })
    }

    pub fn uniform(len: usize) -> Self {
        MismatchedDistribution {
            probs: uniform_weights(len),
        }
    }

    /// Uniform over the listed encoder indices, zero elsewhere.
    pub fn uniform_over(len: usize, members: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; len];
        for &m in members {
            *probs
                .get_mut(m)
                .ok_or_else(|| Error::InvalidDistribution(format!("encoder {m} out of range")))? =
                1.0 / members.len() as f64;
        }
        MismatchedDistribution::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl From<&Posterior> for MismatchedDistribution {
    fn from(p: &Posterior) -> Self {
        MismatchedDistribution {
            probs: p.probs.clone(),
        }
    }
}

fn validate_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("empty distribution".into()));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidDistribution("negative or non-finite mass".into()));
    }
    let sum = tree_sum(probs);
    if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(Error::InvalidDistribution(format!("masses sum to {sum}")));
    }
    Ok(())
}

/// `Pos[T_A]`: encoders `T` for which some subset of the universe maps onto
/// the observation pair for pair. Because `T` is injective the only
/// candidate subset is `T^-1` of the observed symbols.
pub fn pos_set(family: &EncoderFamily, observation: &Observation, universe: &Universe) -> Vec<usize> {
    pos_set_with_labels(family, observation, universe.labels())
}

pub fn pos_set_with_labels(family: &EncoderFamily, observation: &Observation, labels: &[usize]) -> Vec<usize> {
    if observation.has_repeated_symbol() || family.domain_size() != labels.len() {
        return Vec::new();
    }
    (0..family.len())
        .filter(|&i| {
            observation
                .pairs()
                .iter()
                .all(|&(z, y)| family.preimage(i, z).is_some_and(|x| labels[x] == y))
        })
        .collect()
}

/// Posterior over encoders: the prior restricted to `Pos` and renormalized.
pub fn posterior(family: &EncoderFamily, observation: &Observation, universe: &Universe) -> Result<Posterior> {
    family.check_universe(universe)?;
    posterior_from_support(family, &pos_set(family, observation, universe))
}

fn posterior_from_support(family: &EncoderFamily, support: &[usize]) -> Result<Posterior> {
    if support.is_empty() {
        return Err(Error::ImpossibleObservation);
    }
    let w = family.weights();
    let masses: Vec<f64> = support.iter().map(|&i| w[i]).collect();
    let total = tree_sum(&masses);
    let mut probs = vec![0.0; family.len()];
    for &i in support {
        probs[i] = w[i] / total;
    }
    Ok(Posterior { probs })
}

fn argmax_with_ties(probs: &[f64], seed: u64) -> usize {
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..probs.len())
        .filter(|&i| max - probs[i] <= TIE_TOLERANCE)
        .collect();
    if ties.len() == 1 {
        return ties[0];
    }
    ties[rng::rng(seed).random_range(0..ties.len())]
}

/// MAP guess of the encoder; ties are broken uniformly using `seed`.
pub fn optimal_attack(posterior: &Posterior, seed: u64) -> usize {
    argmax_with_ties(&posterior.probs, seed)
}

/// MAP guess under the adversary's mismatched belief `Q`.
pub fn suboptimal_attack(mismatched: &MismatchedDistribution, seed: u64) -> usize {
    argmax_with_ties(&mismatched.probs, seed)
}

/// Builds the adversary's `Q` for each observation.
pub trait MismatchModel: Sync {
    fn build(&self, observation: &Observation, posterior: &Posterior) -> Result<MismatchedDistribution>;
}

impl<F> MismatchModel for F
where
    F: Fn(&Observation, &Posterior) -> Result<MismatchedDistribution> + Sync,
{
    fn build(&self, observation: &Observation, posterior: &Posterior) -> Result<MismatchedDistribution> {
        self(observation, posterior)
    }
}

/// `Q` uniform over the whole family, ignoring the observation.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformQ;

impl MismatchModel for UniformQ {
    fn build(&self, _: &Observation, posterior: &Posterior) -> Result<MismatchedDistribution> {
        Ok(MismatchedDistribution::uniform(posterior.probs.len()))
    }
}

/// `Q = P`: the adversary knows the true posterior.
#[derive(Debug, Clone, Copy, Default)]
pub struct PosteriorQ;

impl MismatchModel for PosteriorQ {
    fn build(&self, _: &Observation, posterior: &Posterior) -> Result<MismatchedDistribution> {
        Ok(MismatchedDistribution::from(posterior))
    }
}

/// The same `Q` for every observation.
#[derive(Debug, Clone)]
pub struct FixedQ(pub MismatchedDistribution);

impl MismatchModel for FixedQ {
    fn build(&self, _: &Observation, _: &Posterior) -> Result<MismatchedDistribution> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Privacy,
    MismatchedPrivacy,
    Utility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationTerm {
    pub observation: Observation,
    pub probability: f64,
    /// `H[. | O]` in bits (cross-entropy for the mismatched score).
    pub conditional_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub kind: ScoreKind,
    pub score_bits: f64,
    pub n: usize,
    pub universe_size: usize,
    pub family_size: usize,
    /// Number of enumerated outcomes.
    pub cost: u128,
    /// `H[L]` for utility scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_entropy_bits: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub per_observation: Vec<ObservationTerm>,
}

impl ScoreReport {
    /// Recomputes `Σ Pr[O] H[.|O]` from the breakdown.
    pub fn expected_conditional_bits(&self) -> f64 {
        let terms: Vec<f64> = self
            .per_observation
            .iter()
            .map(|t| t.probability * t.conditional_bits)
            .collect();
        tree_sum(&terms)
    }

    /// Checks that the breakdown reproduces the score within 1e-12.
    pub fn check(&self) -> Result<()> {
        let expected = match self.label_entropy_bits {
            Some(h) => h - self.expected_conditional_bits(),
            None => self.expected_conditional_bits(),
        };
        if (expected - self.score_bits).abs() > 1e-12 {
            return Err(Error::IdentityViolation(format!(
                "score {} but breakdown sums to {expected}",
                self.score_bits
            )));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// One enumerated `(T, X_A)` outcome.
struct Outcome {
    observation: Observation,
    subset: u32,
    encoder: u32,
    mass: f64,
}

struct Enumeration {
    outcomes: Vec<Outcome>,
    subsets: Vec<Vec<usize>>,
    cost: u128,
}

fn resolve_labels<'a>(universe: &'a Universe, labeling: Option<&'a [usize]>) -> Result<&'a [usize]> {
    match labeling {
        None => Ok(universe.labels()),
        Some(l) if l.len() == universe.len() => Ok(l),
        Some(l) => Err(Error::InvalidUniverse(format!(
            "labeling has {} entries for a universe of {}",
            l.len(),
            universe.len()
        ))),
    }
}

fn check_n(universe: &Universe, n: usize) -> Result<()> {
    if n > universe.len() {
        return Err(Error::SampleCount {
            requested: n,
            available: universe.len(),
        });
    }
    Ok(())
}

/// All `(T, X_A)` pairs with mass `Pr[T] / C(|X|, n)`, sorted by
/// observation and then by encoder index.
fn enumerate(family: &EncoderFamily, labels: &[usize], n: usize, budget: Budget) -> Result<Enumeration> {
    let cost = (family.len() as u128).saturating_mul(binomial(labels.len(), n));
    budget.check(cost)?;
    let subsets = combinations(labels.len(), n);
    let count = subsets.len() as f64;
    let per_encoder = exec::map_range(family.len(), |i| {
        let mapping = family.encoder(i).mapping();
        let mass = family.weights()[i] / count;
        subsets
            .iter()
            .enumerate()
            .map(|(s, subset)| Outcome {
                observation: observe(mapping, labels, subset),
                subset: s as u32,
                encoder: i as u32,
                mass,
            })
            .collect::<Vec<_>>()
    });
    let mut outcomes: Vec<Outcome> = per_encoder.into_iter().flatten().collect();
    outcomes.sort_by(|a, b| a.observation.cmp(&b.observation).then(a.encoder.cmp(&b.encoder)));
    Ok(Enumeration {
        outcomes,
        subsets,
        cost,
    })
}

/// Ranges of consecutive items that `same` puts together.
fn group_by<T>(items: &[T], same: impl Fn(&T, &T) -> bool) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=items.len() {
        if i == items.len() || !same(&items[i], &items[start]) {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

fn group_support(group: &[Outcome]) -> Vec<usize> {
    group.iter().map(|o| o.encoder as usize).collect()
}

/// `S_privacy = H[T_A | O, K_e]` in bits, with the labeling known to the
/// adversary (`labeling` overrides the universe's labels).
pub fn privacy_score(
    family: &EncoderFamily,
    universe: &Universe,
    n: usize,
    labeling: Option<&[usize]>,
    budget: Budget,
) -> Result<ScoreReport> {
    family.check_universe(universe)?;
    check_n(universe, n)?;
    let labels = resolve_labels(universe, labeling)?;
    let e = enumerate(family, labels, n, budget)?;
    let groups = group_by(&e.outcomes, |a, b| a.observation == b.observation);
    let per_observation = exec::map(&groups, |range| {
        let g = &e.outcomes[range.clone()];
        let masses: Vec<f64> = g.iter().map(|o| o.mass).collect();
        let weights: Vec<f64> = g.iter().map(|o| family.weights()[o.encoder as usize]).collect();
        ObservationTerm {
            observation: g[0].observation.clone(),
            probability: tree_sum(&masses),
            conditional_bits: entropy_bits(&weights),
        }
    });
    Ok(report(ScoreKind::Privacy, per_observation, None, n, universe, family, e.cost))
}

fn report(
    kind: ScoreKind,
    per_observation: Vec<ObservationTerm>,
    label_entropy_bits: Option<f64>,
    n: usize,
    universe: &Universe,
    family: &EncoderFamily,
    cost: u128,
) -> ScoreReport {
    let mut r = ScoreReport {
        kind,
        score_bits: 0.0,
        n,
        universe_size: universe.len(),
        family_size: family.len(),
        cost,
        label_entropy_bits,
        seed: None,
        per_observation,
    };
    let cond = r.expected_conditional_bits();
    r.score_bits = match label_entropy_bits {
        Some(h) => h - cond,
        None => cond,
    };
    r
}

struct MismatchTerm {
    probability: f64,
    entropy: f64,
    cross_entropy: f64,
    kl: f64,
}

fn mismatch_terms(
    family: &EncoderFamily,
    universe: &Universe,
    n: usize,
    model: &dyn MismatchModel,
    budget: Budget,
) -> Result<(Enumeration, Vec<std::ops::Range<usize>>, Vec<MismatchTerm>)> {
    family.check_universe(universe)?;
    check_n(universe, n)?;
    let e = enumerate(family, universe.labels(), n, budget)?;
    let groups = group_by(&e.outcomes, |a, b| a.observation == b.observation);
    let terms = exec::map(&groups, |range| -> Result<MismatchTerm> {
        let g = &e.outcomes[range.clone()];
        let p = posterior_from_support(family, &group_support(g))?;
        let q = model.build(&g[0].observation, &p)?;
        if q.probs.len() != family.len() {
            return Err(Error::InvalidDistribution(format!(
                "Q has {} entries for a family of {}",
                q.probs.len(),
                family.len()
            )));
        }
        let violation = || {
            let i = (0..family.len())
                .find(|&i| p.probs[i] > 0.0 && q.probs[i] <= 0.0)
                .unwrap_or(0);
            Error::SupportViolation {
                encoder: i,
                mass: p.probs[i],
            }
        };
        let masses: Vec<f64> = g.iter().map(|o| o.mass).collect();
        Ok(MismatchTerm {
            probability: tree_sum(&masses),
            // same summation as the cross-entropy, so Q = P gives a gap of exactly 0
            entropy: cross_entropy_bits(&p.probs, &p.probs).expect("P covers its own support"),
            cross_entropy: cross_entropy_bits(&p.probs, &q.probs).ok_or_else(violation)?,
            kl: kl_bits(&p.probs, &q.probs).ok_or_else(violation)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok((e, groups, terms))
}

/// `S~_privacy`: expected cross-entropy `-Σ_T P(T) log Q(T)` of the true
/// posterior against the adversary's `Q`.
pub fn mismatched_privacy_score(
    family: &EncoderFamily,
    universe: &Universe,
    n: usize,
    model: &dyn MismatchModel,
    budget: Budget,
) -> Result<ScoreReport> {
    let (e, groups, terms) = mismatch_terms(family, universe, n, model, budget)?;
    let per_observation = groups
        .iter()
        .zip(&terms)
        .map(|(range, t)| ObservationTerm {
            observation: e.outcomes[range.start].observation.clone(),
            probability: t.probability,
            conditional_bits: t.cross_entropy,
        })
        .collect();
    Ok(report(ScoreKind::MismatchedPrivacy, per_observation, None, n, universe, family, e.cost))
}

/// `S~_privacy - S_privacy`, checked against `Σ_O Pr[O] D_KL(P || Q)`.
pub fn kl_gap(
    family: &EncoderFamily,
    universe: &Universe,
    n: usize,
    model: &dyn MismatchModel,
    budget: Budget,
) -> Result<f64> {
    let (_, _, terms) = mismatch_terms(family, universe, n, model, budget)?;
    let weighted = |f: fn(&MismatchTerm) -> f64| {
        let v: Vec<f64> = terms.iter().map(|t| t.probability * f(t)).collect();
        tree_sum(&v)
    };
    let gap = weighted(|t| t.cross_entropy) - weighted(|t| t.entropy);
    let expected_kl = weighted(|t| t.kl);
    if (gap - expected_kl).abs() > IDENTITY_TOLERANCE || gap < -1e-12 {
        return Err(Error::IdentityViolation(format!(
            "cross-entropy gap {gap} but expected KL {expected_kl}"
        )));
    }
    Ok(gap)
}

/// `H[T' ∘ T | O, T]` for `T` from `inner` and `T'` from `outer`: the
/// privacy left once the inner encoder is revealed, averaged over it.
///
/// The composed family's privacy score is never below this value. It equals
/// the outer family's own score when every inner encoder is a
/// label-preserving permutation, but not in general: an inner encoder that
/// moves labels around changes which outer encoders the adversary can rule
/// out.
pub fn privacy_given_inner(
    inner: &EncoderFamily,
    outer: &EncoderFamily,
    universe: &Universe,
    n: usize,
    budget: Budget,
) -> Result<f64> {
    inner.check_universe(universe)?;
    let terms = (0..inner.len())
        .map(|i| {
            let shifted = compose_families(&EncoderFamily::singleton(inner.encoder(i).clone()), outer)?;
            let s = privacy_score(&shifted, universe, n, None, budget)?;
            Ok(inner.weights()[i] * s.score_bits)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(tree_sum(&terms))
}

/// Splits the privacy score into `H[X_A | O]` and `H[T_A | X_A, O]`, both
/// computed from the joint `(T, X_A)` enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub h_data: f64,
    pub h_key_given_data: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.h_data + self.h_key_given_data
    }
}

pub fn decompose_privacy_score(
    family: &EncoderFamily,
    universe: &Universe,
    n: usize,
    budget: Budget,
) -> Result<Decomposition> {
    family.check_universe(universe)?;
    check_n(universe, n)?;
    let mut e = enumerate(family, universe.labels(), n, budget)?;
    e.outcomes.sort_by(|a, b| {
        a.observation
            .cmp(&b.observation)
            .then(e.subsets[a.subset as usize].cmp(&e.subsets[b.subset as usize]))
            .then(a.encoder.cmp(&b.encoder))
    });
    let groups = group_by(&e.outcomes, |a, b| a.observation == b.observation);
    let parts = exec::map(&groups, |range| {
        let g = &e.outcomes[range.clone()];
        let cells = group_by(g, |a, b| a.subset == b.subset);
        let mut subset_mass = Vec::with_capacity(cells.len());
        let mut key_terms = Vec::with_capacity(cells.len());
        for c in &cells {
            let masses: Vec<f64> = g[c.clone()].iter().map(|o| o.mass).collect();
            let m = tree_sum(&masses);
            key_terms.push(m * entropy_bits(&masses));
            subset_mass.push(m);
        }
        let total = tree_sum(&subset_mass);
        (total * entropy_bits(&subset_mass), tree_sum(&key_terms))
    });
    let data: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let key: Vec<f64> = parts.iter().map(|p| p.1).collect();
    Ok(Decomposition {
        h_data: tree_sum(&data),
        h_key_given_data: tree_sum(&key),
    })
}

/// A distribution over total labelings `X -> Y` (labels as indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelingPrior {
    labelings: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl LabelingPrior {
    pub fn new(labelings: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        if labelings.is_empty() || labelings.len() != weights.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} labelings with {} weights",
                labelings.len(),
                weights.len()
            )));
        }
        check_weights(&weights)?;
        let len = labelings[0].len();
        if labelings.iter().any(|l| l.len() != len) {
            return Err(Error::InvalidDistribution("labelings differ in length".into()));
        }
        let mut sorted: Vec<&Vec<usize>> = labelings.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidDistribution("labeling listed twice".into()));
        }
        Ok(LabelingPrior { labelings, weights })
    }

    pub fn uniform(labelings: Vec<Vec<usize>>) -> Result<Self> {
        let w = uniform_weights(labelings.len());
        LabelingPrior::new(labelings, w)
    }

    /// Uniform over all `label_count^n` labelings, lexicographic order.
    pub fn all_labelings(n: usize, label_count: usize) -> Result<Self> {
        let count = (label_count as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
        if label_count == 0 || count > MAX_LABELINGS {
            return Err(Error::InvalidDistribution(format!(
                "{label_count}^{n} labelings is too many to enumerate"
            )));
        }
        let labelings = (0..count as usize)
            .map(|mut k| {
                let mut l = vec![0; n];
                for slot in l.iter_mut().rev() {
                    *slot = k % label_count;
                    k /= label_count;
                }
                l
            })
            .collect();
        LabelingPrior::uniform(labelings)
    }

    pub fn fixed(labeling: Vec<usize>) -> Self {
        LabelingPrior {
            labelings: vec![labeling],
            weights: vec![1.0],
        }
    }

    pub fn labelings(&self) -> &[Vec<usize>] {
        &self.labelings
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.labelings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labelings.is_empty()
    }

    pub fn entropy_bits(&self) -> f64 {
        entropy_bits(&self.weights)
    }

    fn check_universe(&self, universe: &Universe) -> Result<()> {
        if self.labelings[0].len() != universe.len() {
            return Err(Error::InvalidDistribution(format!(
                "labelings cover {} samples but the universe has {}",
                self.labelings[0].len(),
                universe.len()
            )));
        }
        Ok(())
    }
}

/// `L ∘ T^-1` as a table over the codomain, `ABSENT` off `T(X)`.
fn relabel_table(family: &EncoderFamily, encoder: usize, labeling: &[usize]) -> Vec<u32> {
    let mut table = vec![ABSENT; family.codomain_size()];
    for (x, &z) in family.encoder(encoder).mapping().iter().enumerate() {
        table[z as usize] = labeling[x] as u32;
    }
    table
}

/// Ids for every `(labeling, encoder)` pair such that equal `L ∘ T^-1`
/// tables share an id. Index is `l * |F| + t`.
fn relabel_ids(family: &EncoderFamily, prior: &LabelingPrior) -> Vec<u32> {
    let f = family.len();
    let tables = exec::map_range(prior.len() * f, |k| relabel_table(family, k % f, &prior.labelings[k / f]));
    let mut distinct: Vec<&Vec<u32>> = tables.iter().collect();
    distinct.sort();
    distinct.dedup();
    tables
        .iter()
        .map(|t| distinct.binary_search(&t).expect("table is present") as u32)
        .collect()
}

/// Sums `Pr[O] H[Λ | O]` over outcomes sorted by `(key, Λ id)`.
fn conditional_relabel_entropy<K: Ord + Clone + Send + Sync>(
    mut outcomes: Vec<(K, u32, f64)>,
    terms_out: Option<&mut Vec<(K, f64, f64)>>,
) -> f64 {
    outcomes.sort_by(|a, b| match a.0.cmp(&b.0) {
        Ordering::Equal => a.1.cmp(&b.1),
        o => o,
    });
    let groups = group_by(&outcomes, |a, b| a.0 == b.0);
    let terms = exec::map(&groups, |range| {
        let g = &outcomes[range.clone()];
        let cells = group_by(g, |a, b| a.1 == b.1);
        let masses: Vec<f64> = cells
            .iter()
            .map(|c| {
                let m: Vec<f64> = g[c.clone()].iter().map(|o| o.2).collect();
                tree_sum(&m)
            })
            .collect();
        (g[0].0.clone(), tree_sum(&masses), entropy_bits(&masses))
    });
    let weighted: Vec<f64> = terms.iter().map(|t| t.1 * t.2).collect();
    let total = tree_sum(&weighted);
    if let Some(out) = terms_out {
        *out = terms;
    }
    total
}

/// `S_utility = H[L] - H[L ∘ T_A^-1 | O]` with `L` drawn from `prior`, the
/// encoder from the family and `X_A` uniformly among `n`-subsets.
pub fn utility_score(
    family: &EncoderFamily,
    universe: &Universe,
    n: usize,
    prior: &LabelingPrior,
    budget: Budget,
) -> Result<ScoreReport> {
    family.check_universe(universe)?;
    prior.check_universe(universe)?;
    check_n(universe, n)?;
    let f = family.len();
    let cost = (prior.len() as u128)
        .saturating_mul(f as u128)
        .saturating_mul(binomial(universe.len(), n));
    budget.check(cost)?;
    let subsets = combinations(universe.len(), n);
    let count = subsets.len() as f64;
    let ids = relabel_ids(family, prior);
    let per_pair = exec::map_range(prior.len() * f, |k| {
        let (l, t) = (k / f, k % f);
        let labeling = &prior.labelings[l];
        let mapping = family.encoder(t).mapping();
        let mass = prior.weights[l] * family.weights()[t] / count;
        subsets
            .iter()
            .map(|s| (observe(mapping, labeling, s), ids[k], mass))
            .collect::<Vec<_>>()
    });
    let outcomes: Vec<(Observation, u32, f64)> = per_pair.into_iter().flatten().collect();
    let mut terms = Vec::new();
    conditional_relabel_entropy(outcomes, Some(&mut terms));
    let per_observation = terms
        .into_iter()
        .map(|(observation, probability, conditional_bits)| ObservationTerm {
            observation,
            probability,
            conditional_bits,
        })
        .collect();
    Ok(report(
        ScoreKind::Utility,
        per_observation,
        Some(prior.entropy_bits()),
        n,
        universe,
        family,
        cost,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnerUtility {
    pub owner_id: u32,
    /// Utility of this owner's encoder given only its own observation.
    pub single_bits: f64,
    /// Utility of this owner's encoder given every owner's observation.
    pub combined_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiOwnerReport {
    pub label_entropy_bits: f64,
    pub owners: Vec<OwnerUtility>,
}

/// Utility of each owner's scheme alone versus with every owner's encoded
/// data pooled. Owners publish fixed datasets under independently drawn
/// encoders; `L` is drawn from `prior`.
///
/// Owners with empty datasets contribute nothing to the pooled observation
/// and are left out of the enumeration, so pooling with only empty owners
/// reproduces the single-owner value bit for bit.
pub fn multi_owner_utility(
    universe: &Universe,
    owners: &[OwnerDataset],
    families: &[EncoderFamily],
    prior: &LabelingPrior,
    budget: Budget,
) -> Result<MultiOwnerReport> {
    if owners.len() != families.len() || owners.is_empty() {
        return Err(Error::InvalidFamily(format!(
            "{} owners with {} families",
            owners.len(),
            families.len()
        )));
    }
    prior.check_universe(universe)?;
    for f in families {
        f.check_universe(universe)?;
    }
    let mut result = Vec::with_capacity(owners.len());
    for target in 0..owners.len() {
        let single = fixed_data_utility(prior, owners, families, &[target], target, budget)?;
        let members: Vec<usize> = (0..owners.len())
            .filter(|&j| j == target || !owners[j].is_empty())
            .collect();
        let combined = fixed_data_utility(prior, owners, families, &members, target, budget)?;
        if combined < single - IDENTITY_TOLERANCE {
            return Err(Error::IdentityViolation(format!(
                "owner {}: pooled utility {combined} below single-owner {single}",
                owners[target].owner_id
            )));
        }
        result.push(OwnerUtility {
            owner_id: owners[target].owner_id,
            single_bits: single,
            combined_bits: combined,
        });
    }
    Ok(MultiOwnerReport {
        label_entropy_bits: prior.entropy_bits(),
        owners: result,
    })
}

/// `H[L] - H[L ∘ T_target^-1 | O_m for m in members]`.
fn fixed_data_utility(
    prior: &LabelingPrior,
    owners: &[OwnerDataset],
    families: &[EncoderFamily],
    members: &[usize],
    target: usize,
    budget: Budget,
) -> Result<f64> {
    let mut radices = vec![prior.len()];
    radices.extend(members.iter().map(|&m| families[m].len()));
    let cost = radices
        .iter()
        .fold(1u128, |acc, &r| acc.saturating_mul(r as u128));
    budget.check(cost)?;
    let target_pos = members.iter().position(|&m| m == target).expect("target is a member");
    let target_family = &families[target];
    let ids = relabel_ids(target_family, prior);
    let outcomes = exec::map_range(cost as usize, |mut k| {
        let mut digits = vec![0usize; radices.len()];
        for (d, &r) in digits.iter_mut().zip(&radices).rev() {
            *d = k % r;
            k /= r;
        }
        let l = digits[0];
        let labeling = &prior.labelings[l];
        let mut mass = prior.weights[l];
        let mut key = Vec::with_capacity(members.len());
        for (&m, &t) in members.iter().zip(&digits[1..]) {
            mass *= families[m].weights()[t];
            key.push(observe(families[m].encoder(t).mapping(), labeling, owners[m].indices()));
        }
        let lambda = ids[l * target_family.len() + digits[1 + target_pos]];
        (key, lambda, mass)
    });
    Ok(prior.entropy_bits() - conditional_relabel_entropy(outcomes, None))
}
