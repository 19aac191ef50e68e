//! Samples, the unlabeled pool, the labeled training set and the state of
//! one active-learning session.
//!
//! [`SessionState::transfer_sample`] is the only operation that moves a
//! sample from the pool into the training set. Every transfer appends a
//! [`QueryRecord`], so `round == history.len()` and the history is enough
//! to replay the session from its seed.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::{Committee, LabeledPoint, ModelParams};
use crate::quantum::{FidelityLedger, PureState, NORM_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: SampleId,
    pub features: Vec<f64>,
    /// Index into the session's quantum state store.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum_ref: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    /// All samples of the session, in id order.
    pub samples: Vec<Sample>,
    pub unlabeled_ids: BTreeSet<SampleId>,
}

impl Pool {
    /// A pool in which every sample starts unlabeled.
    pub fn new(samples: Vec<Sample>) -> Self {
        let unlabeled_ids = samples.iter().map(|s| s.id).collect();
        Self { samples, unlabeled_ids }
    }

    pub fn sample(&self, id: SampleId) -> Option<&Sample> {
        match self.samples.binary_search_by_key(&id, |s| s.id) {
            Ok(i) => Some(&self.samples[i]),
            Err(_) => self.samples.iter().find(|s| s.id == id),
        }
    }

    pub fn is_unlabeled(&self, id: SampleId) -> bool {
        self.unlabeled_ids.contains(&id)
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.unlabeled_ids.iter().filter_map(|id| self.sample(*id))
    }

    pub fn len_unlabeled(&self) -> usize {
        self.unlabeled_ids.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub entries: Vec<(SampleId, usize)>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.entries.iter().any(|(i, _)| *i == id)
    }
}

/// One answered query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub round: usize,
    pub sample_id: SampleId,
    /// Strategy identifier, or `"init"` for the initial labeled set.
    pub strategy: String,
    pub score: f64,
    pub assigned_label: usize,
    /// Fidelity loss for measured quantum labels, abstract units otherwise.
    pub oracle_cost: f64,
}

/// Where a label came from, recorded alongside the transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub strategy: String,
    pub score: f64,
    pub oracle_cost: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("sample {0} is not in the unlabeled pool")]
    UnknownSample(SampleId),
    #[error("sample {0} is already labeled")]
    AlreadyLabeled(SampleId),
    #[error("label {label} outside 0..{k_classes}")]
    LabelOutOfRange { label: usize, k_classes: usize },
    #[error("invalid provenance: {0}")]
    InvalidProvenance(String),
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),
    #[error("snapshot is malformed: {0}")]
    Malformed(String),
}

/// A broken session invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateSampleId(SampleId),
    FeatureLength {
        id: SampleId,
        expected: usize,
        found: usize,
    },
    DanglingQuantumRef {
        id: SampleId,
        index: usize,
    },
    UnnormalizedState {
        index: usize,
    },
    UnlabeledNotInPool(SampleId),
    LabeledAndUnlabeled(SampleId),
    TrainingUnknownSample(SampleId),
    DuplicateTrainingEntry(SampleId),
    LabelOutOfRange {
        id: SampleId,
        label: usize,
    },
    RoundMismatch {
        round: usize,
        history: usize,
    },
    PendingNotInPool(SampleId),
    ModelShape {
        k_classes: usize,
        dim: usize,
    },
    NonFiniteModel,
    InvalidRecord {
        round: usize,
    },
    CommitteeTooSmall(usize),
    CommitteeShape,
    LedgerMismatch,
    LedgerOverspent,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateSampleId(id) => write!(f, "sample id {id} appears twice"),
            Violation::FeatureLength { id, expected, found } => {
                write!(f, "sample {id} has {found} features, expected {expected}")
            }
            Violation::DanglingQuantumRef { id, index } => {
                write!(f, "sample {id} refers to missing quantum state {index}")
            }
            Violation::UnnormalizedState { index } => write!(f, "quantum state {index} is not normalized"),
            Violation::UnlabeledNotInPool(id) => write!(f, "unlabeled id {id} has no sample"),
            Violation::LabeledAndUnlabeled(id) => write!(f, "sample {id} is both labeled and unlabeled"),
            Violation::TrainingUnknownSample(id) => write!(f, "training entry {id} has no sample"),
            Violation::DuplicateTrainingEntry(id) => write!(f, "sample {id} labeled twice"),
            Violation::LabelOutOfRange { id, label } => write!(f, "sample {id} has label {label} out of range"),
            Violation::RoundMismatch { round, history } => {
                write!(f, "round {round} but {history} history records")
            }
            Violation::PendingNotInPool(id) => write!(f, "pending query {id} is not unlabeled"),
            Violation::ModelShape { k_classes, dim } => {
                write!(f, "model shape {k_classes}x{dim} does not match the session")
            }
            Violation::NonFiniteModel => write!(f, "model has non-finite weights"),
            Violation::InvalidRecord { round } => write!(f, "history record {round} is invalid"),
            Violation::CommitteeTooSmall(n) => write!(f, "committee has {n} members"),
            Violation::CommitteeShape => write!(f, "committee member shape does not match the session"),
            Violation::LedgerMismatch => write!(f, "ledger spent does not equal the sum of its charges"),
            Violation::LedgerOverspent => write!(f, "ledger spent exceeds its threshold"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub k_classes: usize,
    pub dim: usize,
    pub pool: Pool,
    pub training: TrainingSet,
    pub model: ModelParams,
    #[serde(default)]
    pub committee: Option<Committee>,
    #[serde(default)]
    pub ledger: Option<FidelityLedger>,
    #[serde(default)]
    pub quantum_states: Vec<PureState>,
    pub history: Vec<QueryRecord>,
    pub rng_seed: u64,
    pub round: usize,
    #[serde(default)]
    pub pending_query: Option<SampleId>,
}

impl SessionState {
    pub fn new(k_classes: usize, dim: usize, samples: Vec<Sample>, model: ModelParams, rng_seed: u64) -> Self {
        Self {
            k_classes,
            dim,
            pool: Pool::new(samples),
            training: TrainingSet::default(),
            model,
            committee: None,
            ledger: None,
            quantum_states: Vec::new(),
            history: Vec::new(),
            rng_seed,
            round: 0,
            pending_query: None,
        }
    }

    /// Moves `id` from the pool into the training set with `label`.
    ///
    /// On error the state is left unchanged.
    pub fn transfer_sample(&mut self, id: SampleId, label: usize, provenance: Provenance) -> Result<(), SessionError> {
        if self.training.contains(id) {
            return Err(SessionError::AlreadyLabeled(id));
        }
        if !self.pool.is_unlabeled(id) {
            return Err(SessionError::UnknownSample(id));
        }
        if label >= self.k_classes {
            return Err(SessionError::LabelOutOfRange {
                label,
                k_classes: self.k_classes,
            });
        }
        if !provenance.score.is_finite() || provenance.oracle_cost.is_nan() || provenance.oracle_cost < 0.0 {
            return Err(SessionError::InvalidProvenance(format!(
                "score {} cost {}",
                provenance.score, provenance.oracle_cost
            )));
        }
        self.pool.unlabeled_ids.remove(&id);
        self.training.entries.push((id, label));
        self.history.push(QueryRecord {
            round: self.round,
            sample_id: id,
            strategy: provenance.strategy,
            score: provenance.score,
            assigned_label: label,
            oracle_cost: provenance.oracle_cost,
        });
        self.round += 1;
        self.pending_query = None;
        Ok(())
    }

    /// Training entries joined with their features.
    pub fn labeled_points(&self) -> Vec<LabeledPoint<'_>> {
        self.training
            .entries
            .iter()
            .filter_map(|(id, label)| self.pool.sample(*id).map(|s| LabeledPoint::new(&s.features, *label)))
            .collect()
    }

    pub fn quantum_state(&self, id: SampleId) -> Option<&PureState> {
        self.pool
            .sample(id)
            .and_then(|s| s.quantum_ref)
            .and_then(|i| self.quantum_states.get(i))
    }

    pub fn labels_used(&self) -> usize {
        self.training.len()
    }

    /// Every broken invariant; empty when the session is consistent.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut ids = HashSet::new();
        for s in &self.pool.samples {
            if !ids.insert(s.id) {
                out.push(Violation::DuplicateSampleId(s.id));
            }
            if s.features.len() != self.dim {
                out.push(Violation::FeatureLength {
                    id: s.id,
                    expected: self.dim,
                    found: s.features.len(),
                });
            }
            if let Some(index) = s.quantum_ref {
                if index >= self.quantum_states.len() {
                    out.push(Violation::DanglingQuantumRef { id: s.id, index });
                }
            }
        }
        for (index, state) in self.quantum_states.iter().enumerate() {
            if (state.norm_sqr() - 1.0).abs() > NORM_TOL {
                out.push(Violation::UnnormalizedState { index });
            }
        }
        for id in &self.pool.unlabeled_ids {
            if !ids.contains(id) {
                out.push(Violation::UnlabeledNotInPool(*id));
            }
        }
        let mut labeled = HashSet::new();
        for &(id, label) in &self.training.entries {
            if !labeled.insert(id) {
                out.push(Violation::DuplicateTrainingEntry(id));
            }
            if !ids.contains(&id) {
                out.push(Violation::TrainingUnknownSample(id));
            }
            if self.pool.unlabeled_ids.contains(&id) {
                out.push(Violation::LabeledAndUnlabeled(id));
            }
            if label >= self.k_classes {
                out.push(Violation::LabelOutOfRange { id, label });
            }
        }
        if self.round != self.history.len() {
            out.push(Violation::RoundMismatch {
                round: self.round,
                history: self.history.len(),
            });
        }
        if let Some(id) = self.pending_query {
            if !self.pool.unlabeled_ids.contains(&id) {
                out.push(Violation::PendingNotInPool(id));
            }
        }
        if self.model.k_classes() != self.k_classes || self.model.dim() != self.dim {
            out.push(Violation::ModelShape {
                k_classes: self.model.k_classes(),
                dim: self.model.dim(),
            });
        }
        if !self.model.is_finite() {
            out.push(Violation::NonFiniteModel);
        }
        for record in &self.history {
            if !record.score.is_finite() || record.oracle_cost.is_nan() || record.oracle_cost < 0.0 {
                out.push(Violation::InvalidRecord { round: record.round });
            }
        }
        if let Some(committee) = &self.committee {
            if committee.len() < 2 {
                out.push(Violation::CommitteeTooSmall(committee.len()));
            }
            if committee
                .members
                .iter()
                .any(|m| m.k_classes() != self.k_classes || m.dim() != self.dim)
            {
                out.push(Violation::CommitteeShape);
            }
        }
        if let Some(ledger) = &self.ledger {
            let total: f64 = ledger.per_query.iter().fold(0.0, |a, x| a + x);
            if total != ledger.spent {
                out.push(Violation::LedgerMismatch);
            }
            if ledger.spent > ledger.threshold {
                out.push(Violation::LedgerOverspent);
            }
        }
        out
    }
}

/// Current snapshot schema version.
pub const SNAPSHOT_VERSION: u32 = 1;

/// Versioned JSON form of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub version: u32,
    pub seed: u64,
    pub round: usize,
    pub k_classes: usize,
    pub dim: usize,
    pub pool: Pool,
    pub training: TrainingSet,
    pub history: Vec<QueryRecord>,
    pub model: ModelParams,
    #[serde(default)]
    pub committee: Option<Committee>,
    #[serde(default)]
    pub ledger: Option<FidelityLedger>,
    #[serde(default)]
    pub quantum_states: Vec<PureState>,
    #[serde(default)]
    pub pending_query: Option<SampleId>,
}

impl From<&SessionState> for SessionSnapshot {
    fn from(s: &SessionState) -> Self {
        Self {
            version: SNAPSHOT_VERSION,
            seed: s.rng_seed,
            round: s.round,
            k_classes: s.k_classes,
            dim: s.dim,
            pool: s.pool.clone(),
            training: s.training.clone(),
            history: s.history.clone(),
            model: s.model.clone(),
            committee: s.committee.clone(),
            ledger: s.ledger.clone(),
            quantum_states: s.quantum_states.clone(),
            pending_query: s.pending_query,
        }
    }
}

impl TryFrom<SessionSnapshot> for SessionState {
    type Error = SessionError;

    fn try_from(s: SessionSnapshot) -> Result<Self, SessionError> {
        if s.version != SNAPSHOT_VERSION {
            return Err(SessionError::UnsupportedVersion(s.version));
        }
        Ok(Self {
            k_classes: s.k_classes,
            dim: s.dim,
            pool: s.pool,
            training: s.training,
            model: s.model,
            committee: s.committee,
            ledger: s.ledger,
            quantum_states: s.quantum_states,
            history: s.history,
            rng_seed: s.seed,
            round: s.round,
            pending_query: s.pending_query,
        })
    }
}

impl SessionState {
    pub fn to_snapshot_json(&self) -> String {
        serde_json::to_string_pretty(&SessionSnapshot::from(self)).expect("session state serializes")
    }

    pub fn from_snapshot_json(json: &str) -> Result<Self, SessionError> {
        let snapshot: SessionSnapshot =
            serde_json::from_str(json).map_err(|e| SessionError::Malformed(e.to_string()))?;
        snapshot.try_into()
    }
}
