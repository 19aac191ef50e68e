//! Simulated quantum samples and measurement oracles.
//!
//! A sample is a pure state whose class is the basis state carrying the
//! largest probability. Labels are read out by measuring copies of the
//! state, either projectively or with a two-outcome weak measurement on
//! qubits. Each shot costs fidelity; a [`FidelityLedger`] bounds the total.
//!
//! Weak measurement uses the Kraus pair
//!
//! ```text
//! M+ = sqrt((1 + k) / 2) P0 + sqrt((1 - k) / 2) P1
//! M- = sqrt((1 - k) / 2) P0 + sqrt((1 + k) / 2) P1
//! ```
//!
//! with `P0`, `P1` the computational-basis projectors and `k` in `(0, 1]`
//! the strength. `k = 1` is the projective measurement, `k -> 0` neither
//! informs nor disturbs.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("angle {name} = {value} outside its range")]
    AngleOutOfRange { name: &'static str, value: f64 },
    #[error("cannot normalize the zero vector")]
    ZeroVector,
    #[error("states of dimension {0} and {1}")]
    MixedDimensions(usize, usize),
    #[error("no labeled states to compare against")]
    EmptyTrainingSet,
    #[error("weak measurement is defined for qubits only, got dimension {0}")]
    WeakUnsupportedDimension(usize),
    #[error("invalid measurement strength {0}")]
    InvalidStrength(f64),
    #[error("measurement needs at least one shot")]
    NoShots,
    #[error("no measurement counts")]
    NoCounts,
    #[error("fidelity budget exhausted: spent {spent}, charge {amount}, threshold {threshold}")]
    BudgetExhausted { spent: f64, amount: f64, threshold: f64 },
    #[error("invalid charge {0}")]
    InvalidCharge(f64),
    #[error("invalid threshold {0}")]
    InvalidThreshold(f64),
}

pub type Result<T> = std::result::Result<T, QuantumError>;

/// Normalization tolerance for stored states.
pub const NORM_TOL: f64 = 1e-10;

/// A normalized pure state in the computational basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureState {
    amps: Vec<Complex64>,
}

impl PureState {
    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Outcome probabilities `|a_i|^2`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        amps[index] = Complex64::new(1.0, 0.0);
        Self { amps }
    }

    /// Multiplies every amplitude by `e^{i phase}`.
    pub fn with_global_phase(&self, phase: f64) -> Self {
        let factor = Complex64::from_polar(1.0, phase);
        Self {
            amps: self.amps.iter().map(|a| a * factor).collect(),
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=PI).contains(&theta) {
        return Err(QuantumError::AngleOutOfRange {
            name: "theta",
            value: theta,
        });
    }
    Ok(())
}

fn check_phi(phi: f64) -> Result<()> {
    if !(0.0..2.0 * PI).contains(&phi) {
        return Err(QuantumError::AngleOutOfRange {
            name: "phi",
            value: phi,
        });
    }
    Ok(())
}

/// `cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>`.
pub fn prepare_qubit(theta: f64, phi: f64) -> Result<PureState> {
    check_theta(theta)?;
    check_phi(phi)?;
    let half = theta / 2.0;
    Ok(PureState {
        amps: vec![Complex64::new(half.cos(), 0.0), Complex64::from_polar(half.sin(), phi)],
    })
}

pub fn prepare_qudit(raw: Vec<Complex64>) -> Result<PureState> {
    let norm = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(QuantumError::ZeroVector);
    }
    Ok(PureState {
        amps: raw.into_iter().map(|a| a / norm).collect(),
    })
}

/// Bloch-sphere coordinates `(sin t cos p, sin t sin p, cos t)`.
pub fn bloch_features(theta: f64, phi: f64) -> Result<[f64; 3]> {
    check_theta(theta)?;
    check_phi(phi)?;
    Ok([theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()])
}

/// Basis index with the largest probability; lowest index on ties.
pub fn true_label(state: &PureState) -> usize {
    crate::argmax(&state.probabilities()).unwrap_or(0)
}

pub fn overlap(a: &PureState, b: &PureState) -> Result<Complex64> {
    if a.dim() != b.dim() {
        return Err(QuantumError::MixedDimensions(a.dim(), b.dim()));
    }
    Ok(a.amps.iter().zip(&b.amps).map(|(x, y)| x.conj() * y).sum())
}

/// `|<a|b>|^2`.
pub fn fidelity(a: &PureState, b: &PureState) -> Result<f64> {
    Ok(overlap(a, b)?.norm_sqr().min(1.0))
}

/// Mean infidelity of `candidate` to the labeled states, raised to `beta`.
pub fn infidelity_multiplier(candidate: &PureState, labeled: &[PureState], beta: f64) -> Result<f64> {
    if labeled.is_empty() {
        return Err(QuantumError::EmptyTrainingSet);
    }
    let mut total = 0.0;
    for state in labeled {
        total += 1.0 - fidelity(candidate, state)?;
    }
    Ok((total / labeled.len() as f64).max(0.0).powf(beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Projective,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    pub kind: MeasureKind,
    /// Weak strength in `(0, 1]`; must be 1 for projective measurement.
    pub kappa: f64,
    pub shots: usize,
}

impl MeasureConfig {
    pub fn projective(shots: usize) -> Self {
        Self {
            kind: MeasureKind::Projective,
            kappa: 1.0,
            shots,
        }
    }

    pub fn weak(kappa: f64, shots: usize) -> Self {
        Self {
            kind: MeasureKind::Weak,
            kappa,
            shots,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(QuantumError::NoShots);
        }
        let ok = match self.kind {
            MeasureKind::Projective => self.kappa == 1.0,
            MeasureKind::Weak => self.kappa > 0.0 && self.kappa <= 1.0,
        };
        if !ok {
            return Err(QuantumError::InvalidStrength(self.kappa));
        }
        Ok(())
    }
}

/// Diagonal of the weak Kraus operator for `outcome` (0 = `+`, 1 = `-`).
fn weak_kraus_diag(kappa: f64, outcome: usize) -> [f64; 2] {
    let strong = ((1.0 + kappa) / 2.0).sqrt();
    let faint = ((1.0 - kappa) / 2.0).max(0.0).sqrt();
    if outcome == 0 {
        [strong, faint]
    } else {
        [faint, strong]
    }
}

/// Outcome probabilities for one shot under `kind`/`kappa`.
pub fn outcome_probabilities(state: &PureState, kind: MeasureKind, kappa: f64) -> Result<Vec<f64>> {
    match kind {
        MeasureKind::Projective => Ok(state.probabilities()),
        MeasureKind::Weak => {
            if state.dim() != 2 {
                return Err(QuantumError::WeakUnsupportedDimension(state.dim()));
            }
            let p = state.probabilities();
            let plus = (1.0 + kappa * (p[0] - p[1])) / 2.0;
            Ok(vec![plus, 1.0 - plus])
        }
    }
}

/// Normalized state after observing `outcome`.
pub fn post_measurement_state(state: &PureState, kind: MeasureKind, kappa: f64, outcome: usize) -> Result<PureState> {
    match kind {
        MeasureKind::Projective => Ok(PureState::basis(state.dim(), outcome)),
        MeasureKind::Weak => {
            if state.dim() != 2 {
                return Err(QuantumError::WeakUnsupportedDimension(state.dim()));
            }
            let diag = weak_kraus_diag(kappa, outcome);
            prepare_qudit(vec![state.amps[0] * diag[0], state.amps[1] * diag[1]])
        }
    }
}

/// Expected one-shot fidelity loss `1 - E[|<psi|psi_post>|^2]`.
///
/// Each outcome with Kraus operator `M` contributes `|<psi|M|psi>|^2`
/// (probability times post-measurement fidelity). Projective: `1 - sum p_i^2`.
pub fn expected_loss_per_shot(state: &PureState, kind: MeasureKind, kappa: f64) -> Result<f64> {
    let p = state.probabilities();
    let retained = match kind {
        MeasureKind::Projective => p.iter().map(|x| x * x).sum::<f64>(),
        MeasureKind::Weak => {
            if state.dim() != 2 {
                return Err(QuantumError::WeakUnsupportedDimension(state.dim()));
            }
            (0..2)
                .map(|outcome| {
                    let d = weak_kraus_diag(kappa, outcome);
                    let expectation = d[0] * p[0] + d[1] * p[1];
                    expectation * expectation
                })
                .sum::<f64>()
        }
    };
    Ok((1.0 - retained).max(0.0))
}

/// Result of measuring `shots` fresh copies of a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Counts per outcome: basis index for projective, `[+, -]` for weak.
    pub counts: Vec<u64>,
    pub expected_loss_per_shot: f64,
    /// `|<pre|post>|^2` for every shot, in order.
    pub shot_fidelities: Vec<f64>,
}

impl Measurement {
    pub fn shots(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Expected loss summed over all shots; this is what the ledger charges.
    pub fn expected_loss(&self) -> f64 {
        self.expected_loss_per_shot * self.shots() as f64
    }

    /// Monte Carlo mean of the sampled per-shot loss.
    pub fn sampled_mean_loss(&self) -> f64 {
        if self.shot_fidelities.is_empty() {
            return 0.0;
        }
        self.shot_fidelities.iter().map(|f| 1.0 - f).sum::<f64>() / self.shot_fidelities.len() as f64
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the cumulative sum.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn measure<R: Rng + ?Sized>(state: &PureState, config: &MeasureConfig, rng: &mut R) -> Result<Measurement> {
    config.validate()?;
    let probs = outcome_probabilities(state, config.kind, config.kappa)?;
    let expected_loss_per_shot = expected_loss_per_shot(state, config.kind, config.kappa)?;
    let post_states = (0..probs.len())
        .map(|o| post_measurement_state(state, config.kind, config.kappa, o))
        .collect::<Result<Vec<_>>>()?;
    let post_fidelities = post_states
        .iter()
        .map(|post| fidelity(state, post))
        .collect::<Result<Vec<_>>>()?;

    let mut counts = vec![0u64; probs.len()];
    let mut shot_fidelities = Vec::with_capacity(config.shots);
    for _ in 0..config.shots {
        let outcome = sample_index(&probs, rng);
        counts[outcome] += 1;
        shot_fidelities.push(post_fidelities[outcome]);
    }
    Ok(Measurement {
        counts,
        expected_loss_per_shot,
        shot_fidelities,
    })
}

/// Debiased estimate of `p0` from weak counts `[+, -]`, clipped to `[0, 1]`.
pub fn debias_weak(counts: &[u64], kappa: f64) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(QuantumError::NoCounts);
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(QuantumError::InvalidStrength(kappa));
    }
    let f_plus = counts[0] as f64 / total as f64;
    Ok(((f_plus - (1.0 - kappa) / 2.0) / kappa).clamp(0.0, 1.0))
}

/// Class label read from measurement counts.
///
/// Projective: the majority outcome. Weak: the debiased `p0` thresholded
/// at one half, with the tie going to class 0.
pub fn estimate_label(counts: &[u64], config: &MeasureConfig) -> Result<usize> {
    if counts.iter().sum::<u64>() == 0 {
        return Err(QuantumError::NoCounts);
    }
    match config.kind {
        MeasureKind::Projective => {
            let max = counts.iter().copied().max().unwrap_or(0);
            Ok(counts.iter().position(|c| *c == max).unwrap_or(0))
        }
        MeasureKind::Weak => {
            let p0 = debias_weak(counts, config.kappa)?;
            Ok(if p0 >= 0.5 { 0 } else { 1 })
        }
    }
}

/// Variance of the unclipped weak `p0` estimator from `shots` shots.
///
/// `f+` is binomial with success `q = (1 + k(2 p0 - 1)) / 2`, so the
/// estimator variance is `q (1 - q) / (shots k^2)`.
pub fn weak_estimator_variance(p0: f64, kappa: f64, shots: usize) -> f64 {
    let q = (1.0 + kappa * (2.0 * p0 - 1.0)) / 2.0;
    q * (1.0 - q) / (shots as f64 * kappa * kappa)
}

/// Cumulative fidelity-loss budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityLedger {
    pub threshold: f64,
    pub spent: f64,
    pub per_query: Vec<f64>,
}

impl FidelityLedger {
    pub fn new(threshold: f64) -> Result<Self> {
        if threshold.is_nan() || threshold <= 0.0 {
            return Err(QuantumError::InvalidThreshold(threshold));
        }
        Ok(Self {
            threshold,
            spent: 0.0,
            per_query: Vec::new(),
        })
    }

    /// A ledger that never rejects a finite charge.
    pub fn unbounded() -> Self {
        Self {
            threshold: f64::MAX,
            spent: 0.0,
            per_query: Vec::new(),
        }
    }

    pub fn remaining(&self) -> f64 {
        (self.threshold - self.spent).max(0.0)
    }

    pub fn can_afford(&self, amount: f64) -> bool {
        self.spent + amount <= self.threshold
    }

    /// Adds `amount` if it fits under the threshold; otherwise leaves the
    /// ledger untouched and returns [`QuantumError::BudgetExhausted`].
    pub fn charge(&mut self, amount: f64) -> Result<()> {
        if !amount.is_finite() || amount < 0.0 {
            return Err(QuantumError::InvalidCharge(amount));
        }
        if !self.can_afford(amount) {
            return Err(QuantumError::BudgetExhausted {
                spent: self.spent,
                amount,
                threshold: self.threshold,
            });
        }
        self.spent += amount;
        self.per_query.push(amount);
        Ok(())
    }

    pub fn is_consistent(&self) -> bool {
        let total: f64 = self.per_query.iter().fold(0.0, |acc, x| acc + x);
        total == self.spent && self.spent <= self.threshold
    }
}
