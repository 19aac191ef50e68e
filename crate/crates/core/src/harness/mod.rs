//! Seeded experiment driver.
//!
//! [`run_session`] plays one complete session for a `(config, seed)` pair
//! and returns its learning curve; [`compare_strategies`] runs several
//! configs over a shared seed list and aggregates the curves into a
//! [`ComparisonReport`]. The step-wise [`Engine`] underneath is also what
//! the annotation service drives when a human supplies the labels.

mod engine;
mod report;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetConfig, DatasetError};
use crate::learner::{LearnerError, ModelParams, TrainConfig};
use crate::quantum::{MeasureConfig, MeasureKind, QuantumError};
use crate::session::{SampleId, SessionError, SessionState};
use crate::strategy::{Similarity, StrategyError, StrategySpec};

pub use engine::{Engine, OracleAnswer, Query, StepOutcome};
pub use report::{
    aulc, compare_strategies, curve_rows, export_curve, export_report, import_csv, labels_to_target, run_benchmark,
    write_csv, write_results, ComparisonReport, CurveRow, ExportFormat, MeanPoint, SeedResult, StrategySummary,
    CSV_HEADER,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("configs do not share the same dataset and seed list")]
    MismatchedSeeds,
    #[error("unsupported export format {0:?}")]
    UnsupportedFormat(String),
    #[error("test set is empty")]
    EmptySet,
    #[error("no unlabeled samples remain")]
    PoolExhausted,
    #[error("label budget of {0} labels exhausted")]
    LabelBudgetExhausted(usize),
    #[error("sample {submitted} is not the pending query ({pending:?})")]
    StaleQuery {
        submitted: SampleId,
        pending: Option<SampleId>,
    },
    #[error("label {label} outside 0..{k_classes}")]
    LabelOutOfRange { label: usize, k_classes: usize },
    #[error("no pending query")]
    NoPendingQuery,
    #[error("malformed results document: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl HarnessError {
    /// Fidelity ledger refused the next charge.
    pub fn is_fidelity_exhausted(&self) -> bool {
        matches!(self, HarnessError::Quantum(QuantumError::BudgetExhausted { .. }))
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommitteeConfig {
    pub size: usize,
    /// Train each member on a bootstrap resample of the labeled set.
    #[serde(default = "yes")]
    pub resample: bool,
}

fn yes() -> bool {
    true
}

/// Measurement settings for the quantum oracle; shots come from
/// `ExperimentConfig::shots_per_query`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureSettings {
    pub kind: MeasureKind,
    #[serde(default = "unit_strength")]
    pub kappa: f64,
}

fn unit_strength() -> f64 {
    1.0
}

impl Default for MeasureSettings {
    fn default() -> Self {
        Self {
            kind: MeasureKind::Projective,
            kappa: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetConfig,
    pub strategy: StrategySpec,
    #[serde(default)]
    pub learner: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub committee: Option<CommitteeConfig>,
    pub init_labels: usize,
    pub label_budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity_threshold: Option<f64>,
    #[serde(default = "default_shots")]
    pub shots_per_query: usize,
    #[serde(default)]
    pub measure: MeasureSettings,
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub eval_every: usize,
    /// Accuracy used for the labels-to-target statistic.
    #[serde(default = "default_target")]
    pub target_accuracy: f64,
}

fn default_name() -> String {
    "experiment".to_string()
}

fn default_shots() -> usize {
    25
}

fn one() -> usize {
    1
}

fn default_target() -> f64 {
    0.9
}

impl ExperimentConfig {
    pub fn measure_config(&self) -> MeasureConfig {
        MeasureConfig {
            kind: self.measure.kind,
            kappa: self.measure.kappa,
            shots: self.shots_per_query,
        }
    }

    pub fn total_labels(&self) -> usize {
        self.init_labels + self.label_budget
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(HarnessError::ConfigInvalid(m));
        if let Err(e) = self.dataset.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.strategy.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.learner.validate() {
            return invalid(e.to_string());
        }
        if self.init_labels < 1 {
            return invalid("init_labels must be at least 1".into());
        }
        if self.total_labels() > self.dataset.n_pool() {
            return invalid(format!(
                "init_labels + label_budget = {} exceeds the pool size {}",
                self.total_labels(),
                self.dataset.n_pool()
            ));
        }
        if self.eval_every < 1 {
            return invalid("eval_every must be at least 1".into());
        }
        if self.strategy.kind.needs_committee() {
            match self.committee {
                Some(c) if c.size >= 2 => {}
                _ => return invalid(format!("{} needs a committee of size >= 2", self.strategy.kind)),
            }
        }
        if let Some(d) = self.strategy.density {
            if d.similarity == Similarity::QuantumInfidelity && !self.dataset.is_quantum() {
                return invalid("quantum_infidelity density needs a quantum dataset".into());
            }
        }
        if let Some(t) = self.fidelity_threshold {
            if !(t.is_finite() && t > 0.0) {
                return invalid(format!("fidelity_threshold {t} must be positive"));
            }
        }
        if self.dataset.is_quantum() {
            if let Err(e) = self.measure_config().validate() {
                return invalid(e.to_string());
            }
            if self.measure.kind == MeasureKind::Weak && self.dataset.k_classes() != 2 {
                return invalid("weak measurement is only available for qubits".into());
            }
        }
        Ok(())
    }

    /// Reads a JSON or TOML config, chosen by file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub labels_used: usize,
    pub accuracy: f64,
    pub fidelity_spent: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Fraction of test points whose predicted class matches the truth.
pub fn evaluate_accuracy(model: &ModelParams, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if features.is_empty() {
        return Err(HarnessError::EmptySet);
    }
    let mut correct = 0usize;
    for (x, y) in features.iter().zip(labels) {
        if model.predict(x)? == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / features.len() as f64)
}

/// Why a session stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "detail")]
pub enum Termination {
    LabelBudget,
    FidelityBudget,
    PoolExhausted,
    /// A learner or oracle error cut the run short; the curve is partial.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRun {
    pub seed: u64,
    pub curve: LearningCurve,
    pub state: SessionState,
    pub termination: Termination,
}

impl SessionRun {
    pub fn is_partial(&self) -> bool {
        matches!(self.termination, Termination::Failed(_))
    }
}

/// Plays a full simulated-oracle session.
pub fn run_session(config: &ExperimentConfig, seed: u64) -> Result<SessionRun> {
    config.validate()?;
    let mut engine = Engine::start_simulated(config.clone(), seed)?;
    let termination = engine.run_to_completion();
    Ok(SessionRun {
        seed,
        curve: engine.curve().clone(),
        state: engine.state().clone(),
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabelRule;
    use crate::strategy::StrategyKind;

    pub(crate) fn small_quantum(strategy: StrategyKind) -> ExperimentConfig {
        ExperimentConfig {
            name: "t".into(),
            dataset: DatasetConfig::Quantum {
                n_pool: 120,
                n_test: 60,
                qudit_dim: 2,
                seed: None,
                label_rule: LabelRule::ArgmaxAmplitude,
            },
            strategy: StrategySpec::plain(strategy),
            learner: TrainConfig {
                learning_rate: 0.5,
                epochs: 100,
                l2: 1e-3,
                tolerance: 1e-6,
                init_seed: 1,
            },
            committee: Some(CommitteeConfig {
                size: 3,
                resample: true,
            }),
            init_labels: 4,
            label_budget: 12,
            fidelity_threshold: None,
            shots_per_query: 15,
            measure: MeasureSettings::default(),
            seeds: vec![1, 2],
            eval_every: 3,
            target_accuracy: 0.9,
        }
    }

    #[test]
    fn accuracy_bounds() {
        let m = ModelParams::from_weights(2, 1, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let xs = vec![vec![1.0], vec![-1.0]];
        assert_eq!(evaluate_accuracy(&m, &xs, &[0, 1]).unwrap(), 1.0);
        assert_eq!(evaluate_accuracy(&m, &xs, &[1, 1]).unwrap(), 0.5);
        assert_eq!(evaluate_accuracy(&m, &[], &[]), Err(HarnessError::EmptySet));
    }

    #[test]
    fn config_validation() {
        let mut c = small_quantum(StrategyKind::LeastConfidence);
        assert!(c.validate().is_ok());
        c.init_labels = 100;
        c.label_budget = 21;
        assert!(matches!(c.validate(), Err(HarnessError::ConfigInvalid(_))));
        let mut c = small_quantum(StrategyKind::VoteEntropy);
        c.committee = None;
        assert!(c.validate().is_err());
        let mut c = small_quantum(StrategyKind::Margin);
        c.init_labels = 0;
        assert!(c.validate().is_err());
        let mut c = small_quantum(StrategyKind::Margin);
        c.measure = MeasureSettings {
            kind: MeasureKind::Weak,
            kappa: 1.5,
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_budget_gives_initial_point_only() {
        let mut c = small_quantum(StrategyKind::LeastConfidence);
        c.label_budget = 0;
        let run = run_session(&c, 5).unwrap();
        assert_eq!(run.curve.len(), 1);
        assert_eq!(run.curve.points[0].labels_used, 4);
        assert_eq!(run.termination, Termination::LabelBudget);
    }

    #[test]
    fn sessions_are_deterministic() {
        for kind in [StrategyKind::Random, StrategyKind::KlConsensus, StrategyKind::Egl] {
            let c = small_quantum(kind);
            let a = run_session(&c, 11).unwrap();
            let b = run_session(&c, 11).unwrap();
            assert_eq!(a.curve, b.curve);
            assert_eq!(a.state, b.state);
        }
    }

    #[test]
    fn curve_cadence_and_budget() {
        let c = small_quantum(StrategyKind::Margin);
        let run = run_session(&c, 3).unwrap();
        // 1 initial point + 12 / 3 evaluations
        assert_eq!(run.curve.len(), 5);
        assert_eq!(run.state.labels_used(), 16);
        assert!(run.state.validate().is_empty());
        let xs: Vec<_> = run.curve.points.iter().map(|p| p.labels_used).collect();
        assert_eq!(xs, vec![4, 7, 10, 13, 16]);
    }

    #[test]
    fn config_loads_from_toml_and_json() {
        let c = small_quantum(StrategyKind::Entropy);
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("c.json");
        std::fs::write(&json, serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::load(&json).unwrap(), c);
        let toml_path = dir.path().join("c.toml");
        std::fs::write(&toml_path, toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::load(&toml_path).unwrap(), c);
    }
}
