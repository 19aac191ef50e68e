//! Multinomial logistic regression trained by full-batch gradient descent,
//! and seeded committees of such classifiers.
//!
//! Weights are a `K x (d + 1)` row-major matrix; the last column of every
//! row is the bias. The training loss is the mean cross-entropy plus
//! `(l2 / 2) * ||W||^2` over the non-bias weights.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("feature vector has length {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("training set is empty")]
    EmptySet,
    #[error("label {label} outside 0..{k_classes}")]
    LabelOutOfRange { label: usize, k_classes: usize },
    #[error("loss became non-finite after {epoch} epochs")]
    DivergenceDetected { epoch: usize },
    #[error("committee needs at least two members, got {0}")]
    TooFewMembers(usize),
    #[error("invalid class distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid model shape or weights: {0}")]
    InvalidModel(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, LearnerError>;

/// Tolerance on the sum of a probability vector.
pub const DISTRIBUTION_SUM_TOL: f64 = 1e-9;

/// A probability vector over `K` classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    /// Validates entries in `[0, 1]` summing to one within [`DISTRIBUTION_SUM_TOL`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(LearnerError::InvalidDistribution("no classes".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(LearnerError::InvalidDistribution(format!("entry {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOL {
            return Err(LearnerError::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k_classes(&self) -> usize {
        self.probs.len()
    }

    /// Most probable class, lowest index on ties.
    pub fn argmax(&self) -> usize {
        crate::argmax(&self.probs).unwrap_or(0)
    }

    pub fn max_prob(&self) -> f64 {
        self.probs[self.argmax()]
    }
}

impl<'de> Deserialize<'de> for ClassDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(d)?;
        ClassDistribution::new(probs).map_err(serde::de::Error::custom)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> ClassDistribution {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    ClassDistribution {
        probs: exps.into_iter().map(|e| e / total).collect(),
    }
}

/// Classifier parameters, `K x (d + 1)` row-major with the bias last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightMatrix", into = "WeightMatrix")]
pub struct ModelParams {
    k_classes: usize,
    dim: usize,
    weights: Vec<f64>,
}

/// Wire form: shape header plus the flat row-major array.
#[derive(Serialize, Deserialize)]
struct WeightMatrix {
    shape: [usize; 2],
    weights: Vec<f64>,
}

impl TryFrom<WeightMatrix> for ModelParams {
    type Error = LearnerError;

    fn try_from(m: WeightMatrix) -> Result<Self> {
        let [rows, cols] = m.shape;
        if cols == 0 {
            return Err(LearnerError::InvalidModel("zero columns".into()));
        }
        ModelParams::from_weights(rows, cols - 1, m.weights)
    }
}

impl From<ModelParams> for WeightMatrix {
    fn from(p: ModelParams) -> Self {
        WeightMatrix {
            shape: [p.k_classes, p.dim + 1],
            weights: p.weights,
        }
    }
}

impl ModelParams {
    pub fn zeros(k_classes: usize, dim: usize) -> Self {
        Self {
            k_classes,
            dim,
            weights: vec![0.0; k_classes * (dim + 1)],
        }
    }

    /// Uniform initialisation in `[-0.01, 0.01]`.
    pub fn random_init(k_classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng::derive(seed, Stream::WeightInit, 0);
        let weights = (0..k_classes * (dim + 1))
            .map(|_| rng.gen_range(-0.01..=0.01))
            .collect();
        Self {
            k_classes,
            dim,
            weights,
        }
    }

    pub fn from_weights(k_classes: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if k_classes < 1 {
            return Err(LearnerError::InvalidModel("no classes".into()));
        }
        if weights.len() != k_classes * (dim + 1) {
            return Err(LearnerError::InvalidModel(format!(
                "{} weights for shape {}x{}",
                weights.len(),
                k_classes,
                dim + 1
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(LearnerError::InvalidModel("non-finite weight".into()));
        }
        Ok(Self {
            k_classes,
            dim,
            weights,
        })
    }

    pub fn k_classes(&self) -> usize {
        self.k_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cols(&self) -> usize {
        self.dim + 1
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.dim {
            return Err(LearnerError::DimensionMismatch {
                expected: self.dim,
                found: features.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(features)?;
        Ok(self
            .weights
            .chunks_exact(self.cols())
            .map(|row| {
                let (w, b) = row.split_at(self.dim);
                w.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + b[0]
            })
            .collect())
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<ClassDistribution> {
        Ok(softmax(&self.logits(features)?))
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(self.predict_proba(features)?.argmax())
    }
}

/// A labeled feature vector borrowed from a pool or test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

impl<'a> LabeledPoint<'a> {
    pub fn new(features: &'a [f64], label: usize) -> Self {
        Self { features, label }
    }
}

/// Loss value together with its gradient (same layout as the weights).
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub gradient: Vec<f64>,
}

impl LossEval {
    pub fn gradient_norm(&self) -> f64 {
        l2_norm(&self.gradient)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean cross-entropy plus the L2 penalty, and its exact gradient.
pub fn loss_and_gradient(model: &ModelParams, set: &[LabeledPoint<'_>], l2: f64) -> Result<LossEval> {
    if set.is_empty() {
        return Err(LearnerError::EmptySet);
    }
    let k = model.k_classes;
    let cols = model.cols();
    let mut gradient = vec![0.0; k * cols];
    let mut data_loss = 0.0;
    for point in set {
        if point.label >= k {
            return Err(LearnerError::LabelOutOfRange {
                label: point.label,
                k_classes: k,
            });
        }
        let logits = model.logits(point.features)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        data_loss += log_norm - logits[point.label];
        for (c, z) in logits.iter().enumerate() {
            let residual = (z - log_norm).exp() - if c == point.label { 1.0 } else { 0.0 };
            let row = &mut gradient[c * cols..(c + 1) * cols];
            for (g, x) in row.iter_mut().zip(point.features) {
                *g += residual * x;
            }
            row[model.dim] += residual;
        }
    }
    let n = set.len() as f64;
    gradient.iter_mut().for_each(|g| *g /= n);

    let mut penalty = 0.0;
    if l2 > 0.0 {
        for c in 0..k {
            for j in 0..model.dim {
                let w = model.weights[c * cols + j];
                penalty += w * w;
                gradient[c * cols + j] += l2 * w;
            }
        }
    }
    Ok(LossEval {
        loss: data_loss / n + 0.5 * l2 * penalty,
        gradient,
    })
}

pub fn loss(model: &ModelParams, set: &[LabeledPoint<'_>], l2: f64) -> Result<f64> {
    Ok(loss_and_gradient(model, set, l2)?.loss)
}

pub fn loss_gradient(model: &ModelParams, set: &[LabeledPoint<'_>], l2: f64) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(model, set, l2)?.gradient)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default)]
    pub l2: f64,
    /// Stop once the gradient norm drops to this value.
    #[serde(default)]
    pub tolerance: f64,
    #[serde(default)]
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 300,
            l2: 1e-3,
            tolerance: 1e-6,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(LearnerError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(LearnerError::InvalidConfig("l2 must be >= 0".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(LearnerError::InvalidConfig("tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// Full-batch gradient descent starting from `initial`.
pub fn train(initial: &ModelParams, set: &[LabeledPoint<'_>], config: &TrainConfig) -> Result<ModelParams> {
    config.validate()?;
    if set.is_empty() {
        return Err(LearnerError::EmptySet);
    }
    let mut model = initial.clone();
    for epoch in 0..config.epochs {
        let eval = loss_and_gradient(&model, set, config.l2)?;
        if !eval.loss.is_finite() {
            return Err(LearnerError::DivergenceDetected { epoch });
        }
        if eval.gradient_norm() <= config.tolerance {
            break;
        }
        for (w, g) in model.weights.iter_mut().zip(&eval.gradient) {
            *w -= config.learning_rate * g;
        }
        if !model.is_finite() {
            return Err(LearnerError::DivergenceDetected { epoch: epoch + 1 });
        }
    }
    Ok(model)
}

/// Trains from the seeded random initialisation of `config.init_seed`.
pub fn fit(k_classes: usize, dim: usize, set: &[LabeledPoint<'_>], config: &TrainConfig) -> Result<ModelParams> {
    train(&ModelParams::random_init(k_classes, dim, config.init_seed), set, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Committee {
    pub members: Vec<ModelParams>,
    pub member_seeds: Vec<u64>,
    /// Whether each member was trained on a bootstrap resample.
    pub resample: bool,
}

impl Committee {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Trains one member per seed. Each seed drives the member's weight
/// initialisation and, with `resample`, its bootstrap draw of `|set|`
/// entries with replacement.
pub fn train_committee(
    k_classes: usize,
    dim: usize,
    seeds: &[u64],
    set: &[LabeledPoint<'_>],
    config: &TrainConfig,
    resample: bool,
) -> Result<Committee> {
    if seeds.len() < 2 {
        return Err(LearnerError::TooFewMembers(seeds.len()));
    }
    if set.is_empty() {
        return Err(LearnerError::EmptySet);
    }
    let mut members = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let member_config = TrainConfig {
            init_seed: seed,
            ..config.clone()
        };
        let member = if resample {
            let mut rng = rng::derive(seed, Stream::Bootstrap, 0);
            let boot: Vec<LabeledPoint<'_>> = (0..set.len()).map(|_| set[rng.gen_range(0..set.len())]).collect();
            fit(k_classes, dim, &boot, &member_config)?
        } else {
            fit(k_classes, dim, set, &member_config)?
        };
        members.push(member);
    }
    Ok(Committee {
        members,
        member_seeds: seeds.to_vec(),
        resample,
    })
}

/// Per-member predictive distributions and the argmax vote tally.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitteeView {
    pub distributions: Vec<ClassDistribution>,
    /// `votes[y]` = number of members whose most probable class is `y`.
    pub votes: Vec<usize>,
}

pub fn committee_distributions(committee: &Committee, features: &[f64]) -> Result<CommitteeView> {
    let k = committee
        .members
        .first()
        .map(|m| m.k_classes)
        .ok_or(LearnerError::TooFewMembers(0))?;
    let mut votes = vec![0; k];
    let mut distributions = Vec::with_capacity(committee.len());
    for member in &committee.members {
        let dist = member.predict_proba(features)?;
        votes[dist.argmax()] += 1;
        distributions.push(dist);
    }
    Ok(CommitteeView { distributions, votes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zero_weights_predict_uniform() {
        let m = ModelParams::zeros(3, 2);
        let p = m.predict_proba(&[4.0, -1.0]).unwrap();
        for &x in p.probs() {
            assert!(close(x, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_of_large_logit_gap() {
        let p = softmax(&[10.0, -10.0]);
        let tail = 1.0 / (1.0 + 20f64.exp());
        assert!(close(p.probs()[1], tail, 1e-20));
        assert!(close(p.probs()[0], 1.0 - tail, 1e-15));
        assert!(close(p.probs().iter().sum(), 1.0, 1e-15));
        assert!(close(p.probs()[1], 2.061e-9, 1e-12));
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax(&[0.3, -1.2, 2.5]);
        let b = softmax(&[100.3, 98.8, 102.5]);
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = ModelParams::zeros(2, 3);
        assert_eq!(
            m.predict_proba(&[1.0]),
            Err(LearnerError::DimensionMismatch { expected: 3, found: 1 })
        );
    }

    #[test]
    fn uniform_binary_loss_is_ln2() {
        let m = ModelParams::zeros(2, 1);
        let xs = [[0.3], [-2.0], [5.0]];
        let set: Vec<_> = xs.iter().zip([0, 1, 1]).map(|(x, y)| LabeledPoint::new(x, y)).collect();
        assert!(close(loss(&m, &set, 0.0).unwrap(), std::f64::consts::LN_2, 1e-15));
    }

    #[test]
    fn confident_correct_predictions_have_vanishing_loss() {
        let m = ModelParams::from_weights(2, 1, vec![40.0, 0.0, -40.0, 0.0]).unwrap();
        let x = [[1.0], [2.0]];
        let set = [LabeledPoint::new(&x[0], 0), LabeledPoint::new(&x[1], 0)];
        assert!(loss(&m, &set, 0.0).unwrap() < 1e-30);
    }

    #[test]
    fn l2_penalty_increases_loss() {
        let m = ModelParams::from_weights(2, 2, vec![0.5, -0.2, 0.1, -0.3, 0.4, 0.0]).unwrap();
        let x = [[1.0, 2.0]];
        let set = [LabeledPoint::new(&x[0], 1)];
        assert!(loss(&m, &set, 0.1).unwrap() > loss(&m, &set, 0.0).unwrap());
    }

    #[test]
    fn l2_penalty_excludes_bias() {
        let m = ModelParams::from_weights(2, 1, vec![0.0, 3.0, 0.0, -3.0]).unwrap();
        let x = [[0.0]];
        let set = [LabeledPoint::new(&x[0], 0)];
        assert_eq!(loss(&m, &set, 1.0).unwrap(), loss(&m, &set, 0.0).unwrap());
    }

    #[test]
    fn empty_set_errors() {
        let m = ModelParams::zeros(2, 1);
        assert_eq!(loss(&m, &[], 0.0), Err(LearnerError::EmptySet));
        assert_eq!(loss_gradient(&m, &[], 0.0), Err(LearnerError::EmptySet));
        assert_eq!(train(&m, &[], &TrainConfig::default()), Err(LearnerError::EmptySet));
    }

    #[test]
    fn one_hot_fit_has_zero_data_gradient() {
        // Logits (800, 0): the predicted distribution is exactly one-hot in f64.
        let m = ModelParams::from_weights(2, 1, vec![0.0, 800.0, 0.0, 0.0]).unwrap();
        let x = [[1.0]];
        let set = [LabeledPoint::new(&x[0], 0)];
        assert!(loss_gradient(&m, &set, 0.0).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn zero_epochs_returns_initial() {
        let init = ModelParams::random_init(2, 2, 9);
        let x = [[1.0, 0.0]];
        let set = [LabeledPoint::new(&x[0], 1)];
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(train(&init, &set, &cfg).unwrap(), init);
    }

    #[test]
    fn random_init_is_small_and_seeded() {
        let a = ModelParams::random_init(3, 4, 1);
        assert!(a.weights().iter().all(|w| w.abs() <= 0.01));
        assert_eq!(a, ModelParams::random_init(3, 4, 1));
        assert_ne!(a, ModelParams::random_init(3, 4, 2));
    }

    #[test]
    fn divergence_is_detected() {
        let x = [[1e150, -1e150], [-1e150, 1e150]];
        let set = [LabeledPoint::new(&x[0], 0), LabeledPoint::new(&x[1], 1)];
        let cfg = TrainConfig {
            learning_rate: 1e200,
            epochs: 10,
            l2: 0.0,
            tolerance: 0.0,
            init_seed: 0,
        };
        let err = train(&ModelParams::random_init(2, 2, 0), &set, &cfg).unwrap_err();
        assert!(matches!(err, LearnerError::DivergenceDetected { .. }));
    }

    #[test]
    fn model_serializes_with_shape_header() {
        let m = ModelParams::from_weights(2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"shape":[2,2],"weights":[1.0,2.0,3.0,4.0]}"#);
        let back: ModelParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<ModelParams>(r#"{"shape":[2,2],"weights":[1.0]}"#).is_err());
    }

    #[test]
    fn committee_requires_two_members() {
        let x = [[1.0]];
        let set = [LabeledPoint::new(&x[0], 0)];
        assert_eq!(
            train_committee(2, 1, &[3], &set, &TrainConfig::default(), false),
            Err(LearnerError::TooFewMembers(1))
        );
    }

    #[test]
    fn identical_seeds_give_identical_members() {
        let x = [[1.0], [-1.0], [0.2]];
        let set: Vec<_> = x.iter().zip([0, 1, 1]).map(|(x, y)| LabeledPoint::new(x, y)).collect();
        let c = train_committee(2, 1, &[5, 5, 5], &set, &TrainConfig::default(), false).unwrap();
        assert!(c.members.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn split_committee_votes() {
        let pos = ModelParams::from_weights(2, 1, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let neg = ModelParams::from_weights(2, 1, vec![-1.0, 0.0, 1.0, 0.0]).unwrap();
        let committee = Committee {
            members: vec![pos.clone(), neg.clone(), pos, neg],
            member_seeds: vec![0, 1, 2, 3],
            resample: false,
        };
        let view = committee_distributions(&committee, &[2.0]).unwrap();
        assert_eq!(view.votes, vec![2, 2]);
        assert_eq!(view.distributions.len(), 4);
    }

    #[test]
    fn distribution_validation() {
        assert!(ClassDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(ClassDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ClassDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(ClassDistribution::new(vec![f64::NAN, 1.0]).is_err());
        assert!(ClassDistribution::new(vec![]).is_err());
        assert!(serde_json::from_str::<ClassDistribution>("[0.2,0.2]").is_err());
    }
}
