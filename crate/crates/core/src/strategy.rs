//! Acquisition scores and the query selection rule.
//!
//! Every score is oriented so that a higher value means "query first";
//! margin sampling is flipped to `1 - margin` for that reason. Selection
//! takes the maximum and breaks ties towards the lowest sample id.
//! Entropies use the natural logarithm with `0 ln 0 = 0`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::{self, ClassDistribution, LabeledPoint, LearnerError, ModelParams};
use crate::session::{Pool, SampleId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("margin needs at least two classes")]
    SingleClass,
    #[error("votes sum to {sum}, committee has {members} members")]
    VoteCountMismatch { sum: usize, members: usize },
    #[error("committee needs at least two members, got {0}")]
    TooFewMembers(usize),
    #[error("distributions over different class counts")]
    MixedDimensions,
    #[error("no other unlabeled samples to compare against")]
    EmptyPool,
    #[error("no scores to select from")]
    EmptyScores,
    #[error("score for sample {0} is not finite")]
    NonFiniteScore(SampleId),
    #[error("density weighting needs a nonnegative base score, got {0}")]
    NegativeBaseScore(f64),
    #[error("invalid density config: {0}")]
    InvalidDensity(String),
    #[error("unknown strategy identifier {0:?}")]
    UnknownStrategy(String),
    #[error("unknown sample {0}")]
    UnknownSample(SampleId),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

pub type Result<T> = std::result::Result<T, StrategyError>;

/// Informativeness of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub sample_id: SampleId,
    pub value: f64,
}

impl AcquisitionScore {
    pub fn new(sample_id: SampleId, value: f64) -> Self {
        Self { sample_id, value }
    }
}

fn plogp_sum(probs: impl Iterator<Item = f64>) -> f64 {
    -probs.filter(|p| *p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// `1 - max_y P(y|x)`.
pub fn least_confidence(dist: &ClassDistribution) -> f64 {
    1.0 - dist.max_prob()
}

/// `1 - (P(y1|x) - P(y2|x))` for the two most probable classes.
pub fn margin(dist: &ClassDistribution) -> Result<f64> {
    let probs = dist.probs();
    if probs.len() < 2 {
        return Err(StrategyError::SingleClass);
    }
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in probs {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    Ok(1.0 - (first - second))
}

/// Shannon entropy of the predictive distribution.
pub fn entropy(dist: &ClassDistribution) -> f64 {
    plogp_sum(dist.probs().iter().copied()).max(0.0)
}

/// Entropy of the committee's vote shares `V(y) / C`.
pub fn vote_entropy(votes: &[usize], members: usize) -> Result<f64> {
    let sum: usize = votes.iter().sum();
    if members < 2 {
        return Err(StrategyError::TooFewMembers(members));
    }
    if sum != members {
        return Err(StrategyError::VoteCountMismatch { sum, members });
    }
    let c = members as f64;
    Ok(plogp_sum(votes.iter().map(|&v| v as f64 / c)).max(0.0))
}

/// Consensus distribution `P_C(y) = (1/C) sum_c P_c(y)`.
pub fn consensus(members: &[ClassDistribution]) -> Result<Vec<f64>> {
    if members.len() < 2 {
        return Err(StrategyError::TooFewMembers(members.len()));
    }
    let k = members[0].k_classes();
    if members.iter().any(|m| m.k_classes() != k) {
        return Err(StrategyError::MixedDimensions);
    }
    let c = members.len() as f64;
    Ok((0..k)
        .map(|y| members.iter().map(|m| m.probs()[y]).sum::<f64>() / c)
        .collect())
}

/// Mean KL divergence of each member from the consensus.
///
/// A zero member probability contributes nothing; a zero consensus
/// probability forces every member probability to zero, so no division by
/// zero occurs.
pub fn kl_consensus(members: &[ClassDistribution]) -> Result<f64> {
    let pc = consensus(members)?;
    let total: f64 = members
        .iter()
        .map(|m| {
            m.probs()
                .iter()
                .zip(&pc)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, q)| p * (p / q).ln())
                .sum::<f64>()
        })
        .sum();
    Ok((total / members.len() as f64).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EglVariant {
    /// Gradient of the loss on `X + {(x, y)}`.
    Exact,
    /// Gradient on `{(x, y)}` alone, valid once training has converged.
    Approximate,
}

/// Expected gradient length `sum_y P(y|x) ||grad l(.)||`.
pub fn expected_gradient_length(
    model: &ModelParams,
    training: &[LabeledPoint<'_>],
    features: &[f64],
    l2: f64,
    variant: EglVariant,
) -> Result<f64> {
    let dist = model.predict_proba(features)?;
    let mut set: Vec<LabeledPoint<'_>> = match variant {
        EglVariant::Exact => training.to_vec(),
        EglVariant::Approximate => Vec::with_capacity(1),
    };
    set.push(LabeledPoint::new(features, 0));
    let last = set.len() - 1;
    let mut score = 0.0;
    for (y, &p) in dist.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        set[last].label = y;
        let grad = learner::loss_gradient(model, &set, l2)?;
        score += p * learner::l2_norm(&grad);
    }
    Ok(score)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// `exp(-||a - b||^2 / (2 sigma^2))` over the unlabeled pool.
    GaussianKernel,
    /// Mean infidelity to the labeled quantum states.
    QuantumInfidelity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    pub beta: f64,
    pub similarity: Similarity,
    /// Gaussian bandwidth; `None` means the median pairwise pool distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl DensityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(StrategyError::InvalidDensity(format!("beta {}", self.beta)));
        }
        match (self.similarity, self.sigma) {
            (Similarity::GaussianKernel, Some(s)) if !(s.is_finite() && s > 0.0) => {
                Err(StrategyError::InvalidDensity(format!("sigma {s}")))
            }
            (Similarity::QuantumInfidelity, Some(_)) => Err(StrategyError::InvalidDensity(
                "sigma only applies to the gaussian kernel".into(),
            )),
            _ => Ok(()),
        }
    }
}

pub fn gaussian_similarity(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Median of all pairwise Euclidean distances; `None` below two points.
pub fn median_pairwise_distance(points: &[&[f64]]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let mut dists = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            dists.push(
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

/// `[(1/U) sum_u sim(x, x_u)]^beta` over the `U` other unlabeled samples.
pub fn gaussian_density<'a>(
    candidate: &[f64],
    others: impl IntoIterator<Item = &'a [f64]>,
    beta: f64,
    sigma: f64,
) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for other in others {
        total += gaussian_similarity(candidate, other, sigma);
        count += 1;
    }
    if count == 0 {
        return Err(StrategyError::EmptyPool);
    }
    Ok((total / count as f64).powf(beta))
}

/// Density multiplier of `candidate` relative to the rest of the pool.
pub fn density_multiplier(candidate: SampleId, pool: &Pool, config: &DensityConfig) -> Result<f64> {
    config.validate()?;
    if config.similarity != Similarity::GaussianKernel {
        return Err(StrategyError::InvalidDensity(
            "pool density uses the gaussian kernel; use the infidelity multiplier for quantum samples".into(),
        ));
    }
    let target = pool.sample(candidate).ok_or(StrategyError::UnknownSample(candidate))?;
    let others: Vec<&[f64]> = pool
        .unlabeled()
        .filter(|s| s.id != candidate)
        .map(|s| s.features.as_slice())
        .collect();
    let sigma = match config.sigma {
        Some(s) => s,
        None => {
            let all: Vec<&[f64]> = pool.unlabeled().map(|s| s.features.as_slice()).collect();
            median_pairwise_distance(&all).filter(|m| *m > 0.0).unwrap_or(1.0)
        }
    };
    gaussian_density(&target.features, others, config.beta, sigma)
}

/// Base score times the density multiplier.
pub fn density_weighted(base: &AcquisitionScore, multiplier: f64) -> Result<f64> {
    if base.value < 0.0 {
        return Err(StrategyError::NegativeBaseScore(base.value));
    }
    Ok(base.value * multiplier)
}

/// Highest score wins; ties go to the lowest sample id.
pub fn select_query(scores: &[AcquisitionScore]) -> Result<SampleId> {
    let mut best: Option<&AcquisitionScore> = None;
    for s in scores {
        if !s.value.is_finite() {
            return Err(StrategyError::NonFiniteScore(s.sample_id));
        }
        best = match best {
            None => Some(s),
            Some(b) if s.value > b.value || (s.value == b.value && s.sample_id < b.sample_id) => Some(s),
            keep => keep,
        };
    }
    best.map(|s| s.sample_id).ok_or(StrategyError::EmptyScores)
}

/// Uniform draw from the unlabeled ids.
pub fn random_select<R: Rng + ?Sized>(pool: &Pool, rng: &mut R) -> Result<SampleId> {
    let n = pool.len_unlabeled();
    if n == 0 {
        return Err(StrategyError::EmptyPool);
    }
    let k = rng.gen_range(0..n);
    Ok(*pool.unlabeled_ids.iter().nth(k).expect("index below length"))
}

/// Most confidently predicted unlabeled sample and its predicted class.
pub fn self_training_pick(model: &ModelParams, pool: &Pool) -> Result<(SampleId, usize)> {
    let mut best: Option<(SampleId, usize, f64)> = None;
    for sample in pool.unlabeled() {
        let dist = model.predict_proba(&sample.features)?;
        let conf = dist.max_prob();
        if best.is_none_or(|(_, _, b)| conf > b) {
            best = Some((sample.id, dist.argmax(), conf));
        }
    }
    best.map(|(id, y, _)| (id, y)).ok_or(StrategyError::EmptyPool)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Random,
    LeastConfidence,
    Margin,
    Entropy,
    VoteEntropy,
    KlConsensus,
    Egl,
    EglExact,
    SelfTraining,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 9] = [
        StrategyKind::Random,
        StrategyKind::LeastConfidence,
        StrategyKind::Margin,
        StrategyKind::Entropy,
        StrategyKind::VoteEntropy,
        StrategyKind::KlConsensus,
        StrategyKind::Egl,
        StrategyKind::EglExact,
        StrategyKind::SelfTraining,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::LeastConfidence => "least_confidence",
            StrategyKind::Margin => "margin",
            StrategyKind::Entropy => "entropy",
            StrategyKind::VoteEntropy => "vote_entropy",
            StrategyKind::KlConsensus => "kl_consensus",
            StrategyKind::Egl => "egl",
            StrategyKind::EglExact => "egl_exact",
            StrategyKind::SelfTraining => "self_training",
        }
    }

    pub fn needs_committee(self) -> bool {
        matches!(self, StrategyKind::VoteEntropy | StrategyKind::KlConsensus)
    }

    /// Whether the score is a nonnegative informativeness that density
    /// weighting can scale.
    pub fn supports_density(self) -> bool {
        !matches!(self, StrategyKind::Random | StrategyKind::SelfTraining)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| StrategyError::UnknownStrategy(s.to_string()))
    }
}

pub const DENSITY_SUFFIX: &str = "+density";

/// A strategy identifier with its optional density weighting.
///
/// Serialized as `{"name": "margin+density", "beta": 1.0, "similarity":
/// "gaussian_kernel", "sigma": 0.5}`; a bare string such as `"entropy"` is
/// also accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StrategyRepr", into = "StrategyRepr")]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub density: Option<DensityConfig>,
}

impl StrategySpec {
    pub fn plain(kind: StrategyKind) -> Self {
        Self { kind, density: None }
    }

    pub fn with_density(kind: StrategyKind, density: DensityConfig) -> Self {
        Self {
            kind,
            density: Some(density),
        }
    }

    /// Full identifier, e.g. `entropy+density`.
    pub fn name(&self) -> String {
        match self.density {
            Some(_) => format!("{}{}", self.kind, DENSITY_SUFFIX),
            None => self.kind.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = &self.density {
            if !self.kind.supports_density() {
                return Err(StrategyError::InvalidDensity(format!(
                    "{} cannot be density weighted",
                    self.kind
                )));
            }
            d.validate()?;
        }
        Ok(())
    }
}

impl FromStr for StrategySpec {
    type Err = StrategyError;

    /// Parses an identifier; `+density` gets `beta = 1` with the gaussian
    /// kernel and the median bandwidth.
    fn from_str(s: &str) -> Result<Self> {
        match s.strip_suffix(DENSITY_SUFFIX) {
            Some(base) => Ok(StrategySpec::with_density(
                base.parse()?,
                DensityConfig {
                    beta: 1.0,
                    similarity: Similarity::GaussianKernel,
                    sigma: None,
                },
            )),
            None => Ok(StrategySpec::plain(s.parse()?)),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StrategyRepr {
    Name(String),
    Full {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        similarity: Option<Similarity>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
    },
}

impl TryFrom<StrategyRepr> for StrategySpec {
    type Error = StrategyError;

    fn try_from(r: StrategyRepr) -> Result<Self> {
        let spec = match r {
            StrategyRepr::Name(name) => name.parse()?,
            StrategyRepr::Full {
                name,
                beta,
                similarity,
                sigma,
            } => {
                let mut spec: StrategySpec = name.parse()?;
                if let Some(d) = spec.density.as_mut() {
                    d.beta = beta.unwrap_or(d.beta);
                    d.similarity = similarity.unwrap_or(d.similarity);
                    d.sigma = sigma;
                } else if beta.is_some() || similarity.is_some() || sigma.is_some() {
                    return Err(StrategyError::InvalidDensity(format!(
                        "density parameters given without {DENSITY_SUFFIX}"
                    )));
                }
                spec
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<StrategySpec> for StrategyRepr {
    fn from(s: StrategySpec) -> Self {
        StrategyRepr::Full {
            name: s.name(),
            beta: s.density.map(|d| d.beta),
            similarity: s.density.map(|d| d.similarity),
            sigma: s.density.and_then(|d| d.sigma),
        }
    }
}
