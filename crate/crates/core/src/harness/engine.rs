use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{CurvePoint, ExperimentConfig, HarnessError, LearningCurve, Result, Termination};
use crate::dataset::{self, Dataset, RenderHint};
use crate::learner::{self, ModelParams};
use crate::quantum::{self, FidelityLedger, QuantumError};
use crate::rng::{self, Stream};
use crate::session::{Provenance, QueryRecord, SampleId, SessionState};
use crate::strategy::{self, AcquisitionScore, EglVariant, Similarity, StrategyKind};

/// Strategy tag recorded for the initial labeled set.
pub const INIT_STRATEGY: &str = "init";

/// The sample currently put to the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub sample_id: SampleId,
    pub score: f64,
    pub strategy: String,
    pub round: usize,
    /// Self-training answers its own query with this label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_label: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleAnswer {
    pub label: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub query: Query,
    pub answer: OracleAnswer,
    pub point: Option<CurvePoint>,
}

/// Pool-wide sums of Gaussian similarities, updated as samples leave the
/// pool instead of being recomputed every round.
#[derive(Debug, Clone)]
struct DensityCache {
    sigma: f64,
    members: BTreeSet<SampleId>,
    sums: HashMap<SampleId, f64>,
}

impl DensityCache {
    fn build(state: &SessionState, sigma: Option<f64>) -> Self {
        let members: BTreeSet<SampleId> = state.pool.unlabeled_ids.clone();
        let feats: Vec<(SampleId, &[f64])> = state.pool.unlabeled().map(|s| (s.id, s.features.as_slice())).collect();
        let sigma = sigma.unwrap_or_else(|| {
            let pts: Vec<&[f64]> = feats.iter().map(|(_, f)| *f).collect();
            strategy::median_pairwise_distance(&pts)
                .filter(|m| *m > 0.0)
                .unwrap_or(1.0)
        });
        let mut sums: HashMap<SampleId, f64> = feats.iter().map(|(id, _)| (*id, 0.0)).collect();
        for (i, (a_id, a)) in feats.iter().enumerate() {
            for (b_id, b) in &feats[i + 1..] {
                let s = strategy::gaussian_similarity(a, b, sigma);
                *sums.get_mut(a_id).expect("member") += s;
                *sums.get_mut(b_id).expect("member") += s;
            }
        }
        Self { sigma, members, sums }
    }

    fn sync(&mut self, state: &SessionState) {
        let removed: Vec<SampleId> = self
            .members
            .iter()
            .filter(|id| !state.pool.is_unlabeled(**id))
            .copied()
            .collect();
        for r in removed {
            self.members.remove(&r);
            self.sums.remove(&r);
            let gone = &state.pool.sample(r).expect("pool sample").features;
            for m in &self.members {
                let f = &state.pool.sample(*m).expect("pool sample").features;
                *self.sums.get_mut(m).expect("member") -= strategy::gaussian_similarity(f, gone, self.sigma);
            }
        }
    }

    fn multiplier(&self, id: SampleId, beta: f64) -> f64 {
        let others = self.members.len().saturating_sub(1);
        if others == 0 {
            // Nothing left to be representative of.
            return 1.0;
        }
        (self.sums[&id].max(0.0) / others as f64).powf(beta)
    }
}

/// Step-wise active-learning session over a generated dataset.
///
/// The oracle is external to the engine: [`Engine::next_query`] marks a
/// pending sample, and [`Engine::submit_label`] answers it. The simulated
/// oracle ([`Engine::oracle_answer`]) and a human feed the same entry
/// point, so a session evolves identically for the same label sequence.
#[derive(Debug, Clone)]
pub struct Engine {
    config: ExperimentConfig,
    seed: u64,
    dataset: Dataset,
    state: SessionState,
    curve: LearningCurve,
    init_queue: VecDeque<SampleId>,
    pending: Option<Query>,
    labels_since_start: usize,
    model_stale: bool,
    density: Option<DensityCache>,
    halted: Option<Termination>,
}

impl Engine {
    fn build(config: ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dataset = dataset::generate(&config.dataset, seed)?;
        let model = ModelParams::random_init(dataset.k_classes, dataset.dim, config.learner.init_seed);
        let mut state = SessionState::new(dataset.k_classes, dataset.dim, dataset.pool.clone(), model, seed);
        state.quantum_states = dataset.states.clone();
        if config.dataset.is_quantum() {
            state.ledger = Some(match config.fidelity_threshold {
                Some(t) => FidelityLedger::new(t)?,
                None => FidelityLedger::unbounded(),
            });
        }
        let mut init_rng = rng::derive(seed, Stream::InitialLabels, 0);
        let init_queue = index::sample(&mut init_rng, dataset.pool.len(), config.init_labels)
            .into_iter()
            .map(|i| dataset.pool[i].id)
            .collect();
        Ok(Self {
            config,
            seed,
            dataset,
            state,
            curve: LearningCurve::default(),
            init_queue,
            pending: None,
            labels_since_start: 0,
            model_stale: false,
            density: None,
            halted: None,
        })
    }

    /// Session whose initial labels come from the simulated oracle. The
    /// first curve point is taken once they are in.
    pub fn start_simulated(config: ExperimentConfig, seed: u64) -> Result<Self> {
        let mut engine = Self::build(config, seed)?;
        while !engine.init_queue.is_empty() {
            if let Err(e) = engine.step_once() {
                engine.halt(e);
                break;
            }
        }
        if let Err(e) = engine.record_point() {
            engine.halt(e);
        }
        Ok(engine)
    }

    /// Session whose every label, the initial ones included, is submitted
    /// from outside. The first curve point is the untrained model.
    pub fn start_external(config: ExperimentConfig, seed: u64) -> Result<Self> {
        let mut engine = Self::build(config, seed)?;
        engine.record_point()?;
        Ok(engine)
    }

    /// Rebuilds a session by re-applying recorded transfers in order.
    pub fn replay(config: ExperimentConfig, seed: u64, history: &[QueryRecord]) -> Result<Self> {
        let mut engine = Self::build(config, seed)?;
        for record in history {
            engine.pending = Some(Query {
                sample_id: record.sample_id,
                score: record.score,
                strategy: record.strategy.clone(),
                round: record.round,
                pseudo_label: None,
            });
            engine.state.pending_query = Some(record.sample_id);
            engine.submit_label(record.sample_id, record.assigned_label, record.oracle_cost)?;
        }
        engine.ensure_trained()?;
        Ok(engine)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.curve
    }

    pub fn pending(&self) -> Option<&Query> {
        self.pending.as_ref()
    }

    pub fn render_hint(&self) -> RenderHint {
        self.dataset.render_hint
    }

    pub fn termination(&self) -> Option<&Termination> {
        self.halted.as_ref()
    }

    pub fn labels_remaining(&self) -> usize {
        self.config.total_labels().saturating_sub(self.state.labels_used())
    }

    pub fn fidelity_remaining(&self) -> Option<f64> {
        self.state.ledger.as_ref().map(FidelityLedger::remaining)
    }

    fn fidelity_spent(&self) -> f64 {
        self.state.ledger.as_ref().map_or(0.0, |l| l.spent)
    }

    /// Retrains from scratch when labels changed since the last fit.
    pub fn ensure_trained(&mut self) -> Result<()> {
        if !self.model_stale {
            return Ok(());
        }
        let cfg = &self.config.learner;
        let (k, d) = (self.state.k_classes, self.state.dim);
        let points = self.state.labeled_points();
        let (model, committee) = if points.is_empty() {
            (ModelParams::random_init(k, d, cfg.init_seed), None)
        } else {
            let model = learner::fit(k, d, &points, cfg)?;
            let committee = match (self.config.strategy.kind.needs_committee(), self.config.committee) {
                (true, Some(c)) => {
                    let seeds: Vec<u64> = (0..c.size as u64).map(|i| cfg.init_seed.wrapping_add(i)).collect();
                    Some(learner::train_committee(k, d, &seeds, &points, cfg, c.resample)?)
                }
                _ => None,
            };
            (model, committee)
        };
        self.state.model = model;
        self.state.committee = committee;
        self.model_stale = false;
        Ok(())
    }

    pub fn current_accuracy(&mut self) -> Result<f64> {
        self.ensure_trained()?;
        super::evaluate_accuracy(
            &self.state.model,
            &self.dataset.test_features,
            &self.dataset.test_labels,
        )
    }

    fn record_point(&mut self) -> Result<CurvePoint> {
        let point = CurvePoint {
            labels_used: self.state.labels_used(),
            accuracy: self.current_accuracy()?,
            fidelity_spent: self.fidelity_spent(),
        };
        self.curve.points.push(point);
        Ok(point)
    }

    /// Picks the next sample to label, or returns the pending one again.
    pub fn next_query(&mut self) -> Result<Query> {
        if let Some(q) = &self.pending {
            return Ok(q.clone());
        }
        if self.state.pool.len_unlabeled() == 0 {
            return Err(HarnessError::PoolExhausted);
        }
        if self.state.labels_used() >= self.config.total_labels() {
            return Err(HarnessError::LabelBudgetExhausted(self.config.total_labels()));
        }
        if let Some(ledger) = &self.state.ledger {
            if ledger.remaining() <= 0.0 {
                return Err(QuantumError::BudgetExhausted {
                    spent: ledger.spent,
                    amount: 0.0,
                    threshold: ledger.threshold,
                }
                .into());
            }
        }
        let query = match self.init_queue.front() {
            Some(&id) => Query {
                sample_id: id,
                score: 0.0,
                strategy: INIT_STRATEGY.to_string(),
                round: self.state.round,
                pseudo_label: None,
            },
            None => {
                self.ensure_trained()?;
                self.select()?
            }
        };
        self.state.pending_query = Some(query.sample_id);
        self.pending = Some(query.clone());
        Ok(query)
    }

    fn select(&mut self) -> Result<Query> {
        let spec = self.config.strategy;
        let round = self.state.round;
        let query = |sample_id, score, pseudo_label| Query {
            sample_id,
            score,
            strategy: spec.name(),
            round,
            pseudo_label,
        };
        match spec.kind {
            StrategyKind::Random => {
                let mut rng = rng::derive(self.seed, Stream::Selection, round as u64);
                let id = strategy::random_select(&self.state.pool, &mut rng)?;
                return Ok(query(id, 0.0, None));
            }
            StrategyKind::SelfTraining => {
                let (id, label) = strategy::self_training_pick(&self.state.model, &self.state.pool)?;
                let sample = self.state.pool.sample(id).expect("unlabeled sample exists");
                let confidence = self.state.model.predict_proba(&sample.features)?.max_prob();
                return Ok(query(id, confidence, Some(label)));
            }
            _ => {}
        }

        let mut scores = self.base_scores()?;
        if let Some(density) = spec.density {
            match density.similarity {
                Similarity::GaussianKernel => {
                    let state = &self.state;
                    let cache = self
                        .density
                        .get_or_insert_with(|| DensityCache::build(state, density.sigma));
                    cache.sync(state);
                    for s in &mut scores {
                        s.value = strategy::density_weighted(s, cache.multiplier(s.sample_id, density.beta))?;
                    }
                }
                Similarity::QuantumInfidelity => {
                    let labeled: Vec<_> = self
                        .state
                        .training
                        .entries
                        .iter()
                        .filter_map(|(id, _)| self.state.quantum_state(*id).cloned())
                        .collect();
                    for s in &mut scores {
                        let candidate = self.state.quantum_state(s.sample_id).ok_or_else(|| {
                            HarnessError::ConfigInvalid(format!("sample {} has no quantum state", s.sample_id))
                        })?;
                        let m = quantum::infidelity_multiplier(candidate, &labeled, density.beta)?;
                        s.value = strategy::density_weighted(s, m)?;
                    }
                }
            }
        }
        let id = strategy::select_query(&scores)?;
        let score = scores.iter().find(|s| s.sample_id == id).map_or(0.0, |s| s.value);
        Ok(query(id, score, None))
    }

    fn base_scores(&self) -> Result<Vec<AcquisitionScore>> {
        let kind = self.config.strategy.kind;
        let model = &self.state.model;
        let training = self.state.labeled_points();
        let l2 = self.config.learner.l2;
        self.state
            .pool
            .unlabeled()
            .map(|sample| {
                let x = &sample.features;
                let value = match kind {
                    StrategyKind::LeastConfidence => strategy::least_confidence(&model.predict_proba(x)?),
                    StrategyKind::Margin => strategy::margin(&model.predict_proba(x)?)?,
                    StrategyKind::Entropy => strategy::entropy(&model.predict_proba(x)?),
                    StrategyKind::VoteEntropy | StrategyKind::KlConsensus => {
                        let committee = self.state.committee.as_ref().ok_or_else(|| {
                            HarnessError::ConfigInvalid("committee strategy without a trained committee".into())
                        })?;
                        let view = learner::committee_distributions(committee, x)?;
                        if kind == StrategyKind::VoteEntropy {
                            strategy::vote_entropy(&view.votes, committee.len())?
                        } else {
                            strategy::kl_consensus(&view.distributions)?
                        }
                    }
                    StrategyKind::Egl => {
                        strategy::expected_gradient_length(model, &training, x, l2, EglVariant::Approximate)?
                    }
                    StrategyKind::EglExact => {
                        strategy::expected_gradient_length(model, &training, x, l2, EglVariant::Exact)?
                    }
                    StrategyKind::Random | StrategyKind::SelfTraining => unreachable!("handled in select"),
                };
                Ok(AcquisitionScore::new(sample.id, value))
            })
            .collect()
    }

    /// Oracle cost of answering `query`: nothing for a pseudo-label, one
    /// unit for a classical sample, and the expected fidelity loss of a
    /// full measurement for a quantum sample. The quantum charge does not
    /// depend on who reads the outcome, so a human label costs the same.
    pub fn oracle_cost(&self, query: &Query) -> Result<f64> {
        if query.pseudo_label.is_some() {
            return Ok(0.0);
        }
        let sample = self
            .state
            .pool
            .sample(query.sample_id)
            .ok_or(HarnessError::PoolExhausted)?;
        match sample.quantum_ref {
            None => Ok(1.0),
            Some(i) => {
                let m = self.config.measure_config();
                let per_shot = quantum::expected_loss_per_shot(&self.state.quantum_states[i], m.kind, m.kappa)?;
                Ok(per_shot * m.shots as f64)
            }
        }
    }

    fn check_affordable(&self, cost: f64) -> Result<()> {
        match &self.state.ledger {
            Some(ledger) if cost > 0.0 && !ledger.can_afford(cost) => Err(QuantumError::BudgetExhausted {
                spent: ledger.spent,
                amount: cost,
                threshold: ledger.threshold,
            }
            .into()),
            _ => Ok(()),
        }
    }

    /// Simulated oracle: ground truth for classical samples, a label read
    /// from measurement counts for quantum ones.
    ///
    /// Fails with a fidelity `BudgetExhausted` when the ledger cannot cover
    /// the measurement; nothing is charged until the label is submitted.
    pub fn oracle_answer(&self, query: &Query) -> Result<OracleAnswer> {
        let cost = self.oracle_cost(query)?;
        if let Some(label) = query.pseudo_label {
            return Ok(OracleAnswer { label, cost });
        }
        self.check_affordable(cost)?;
        let sample = self.state.pool.sample(query.sample_id).expect("checked by oracle_cost");
        let Some(state_ref) = sample.quantum_ref else {
            let label = self
                .dataset
                .truth(query.sample_id)
                .expect("pool sample has ground truth");
            return Ok(OracleAnswer { label, cost });
        };
        let mut rng = rng::derive(self.seed, Stream::Oracle, query.round as u64);
        let measure_cfg = self.config.measure_config();
        let m = quantum::measure(&self.state.quantum_states[state_ref], &measure_cfg, &mut rng)?;
        Ok(OracleAnswer {
            label: quantum::estimate_label(&m.counts, &measure_cfg)?,
            cost,
        })
    }

    /// Answers the pending query with an externally supplied label, charged
    /// at [`Engine::oracle_cost`].
    pub fn submit_external(&mut self, sample_id: SampleId, label: usize) -> Result<Option<CurvePoint>> {
        let cost = match &self.pending {
            Some(q) if q.sample_id == sample_id => self.oracle_cost(q)?,
            other => {
                return Err(HarnessError::StaleQuery {
                    submitted: sample_id,
                    pending: other.as_ref().map(|q| q.sample_id),
                })
            }
        };
        self.submit_label(sample_id, label, cost)
    }

    /// Answers the pending query. Nothing changes on error.
    pub fn submit_label(&mut self, sample_id: SampleId, label: usize, cost: f64) -> Result<Option<CurvePoint>> {
        let pending = match &self.pending {
            Some(q) if q.sample_id == sample_id => q.clone(),
            other => {
                return Err(HarnessError::StaleQuery {
                    submitted: sample_id,
                    pending: other.as_ref().map(|q| q.sample_id),
                })
            }
        };
        if label >= self.state.k_classes {
            return Err(HarnessError::LabelOutOfRange {
                label,
                k_classes: self.state.k_classes,
            });
        }
        let charge = cost > 0.0 && self.state.ledger.is_some();
        self.check_affordable(cost)?;
        self.state.transfer_sample(
            sample_id,
            label,
            Provenance {
                strategy: pending.strategy.clone(),
                score: pending.score,
                oracle_cost: cost,
            },
        )?;
        if charge {
            if let Some(ledger) = self.state.ledger.as_mut() {
                ledger.charge(cost).expect("affordability checked before the transfer");
            }
        }
        if self.init_queue.front() == Some(&sample_id) {
            self.init_queue.pop_front();
        }
        self.pending = None;
        self.model_stale = true;

        let in_simulated_init = pending.strategy == INIT_STRATEGY && self.curve.is_empty();
        if in_simulated_init {
            return Ok(None);
        }
        self.labels_since_start += 1;
        if self.labels_since_start.is_multiple_of(self.config.eval_every) {
            return self.record_point().map(Some);
        }
        Ok(None)
    }

    fn step_once(&mut self) -> Result<StepOutcome> {
        let query = self.next_query()?;
        let answer = self.oracle_answer(&query)?;
        let point = self.submit_label(query.sample_id, answer.label, answer.cost)?;
        Ok(StepOutcome { query, answer, point })
    }

    /// One simulated query-label-transfer round.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if let Some(t) = &self.halted {
            return Err(match t {
                Termination::LabelBudget => HarnessError::LabelBudgetExhausted(self.config.total_labels()),
                Termination::PoolExhausted => HarnessError::PoolExhausted,
                Termination::FidelityBudget => QuantumError::BudgetExhausted {
                    spent: self.fidelity_spent(),
                    amount: 0.0,
                    threshold: self.state.ledger.as_ref().map_or(0.0, |l| l.threshold),
                }
                .into(),
                Termination::Failed(m) => HarnessError::Malformed(m.clone()),
            });
        }
        self.step_once()
    }

    fn halt(&mut self, error: HarnessError) -> Termination {
        let termination = match &error {
            HarnessError::LabelBudgetExhausted(_) => Termination::LabelBudget,
            HarnessError::PoolExhausted => Termination::PoolExhausted,
            e if e.is_fidelity_exhausted() => Termination::FidelityBudget,
            e => Termination::Failed(e.to_string()),
        };
        self.pending = None;
        self.state.pending_query = None;
        let _ = self.ensure_trained();
        self.halted = Some(termination.clone());
        termination
    }

    /// Steps until the label budget, the fidelity budget or the pool runs
    /// out, or an error stops the run.
    pub fn run_to_completion(&mut self) -> Termination {
        if let Some(t) = &self.halted {
            return t.clone();
        }
        loop {
            if let Err(e) = self.step_once() {
                return self.halt(e);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetConfig, LabelRule};
    use crate::harness::{run_session, CommitteeConfig, MeasureSettings};
    use crate::learner::TrainConfig;
    use crate::strategy::{DensityConfig, StrategySpec};

    fn blobs(strategy: StrategySpec) -> ExperimentConfig {
        ExperimentConfig {
            name: "blobs".into(),
            dataset: DatasetConfig::GaussianBlobs {
                n_pool: 80,
                n_test: 40,
                n_classes: 3,
                dim: 2,
                separation: 2.0,
                spread: 0.8,
                seed: None,
            },
            strategy,
            learner: TrainConfig {
                learning_rate: 0.5,
                epochs: 80,
                l2: 1e-3,
                tolerance: 1e-6,
                init_seed: 3,
            },
            committee: Some(CommitteeConfig {
                size: 3,
                resample: true,
            }),
            init_labels: 3,
            label_budget: 10,
            fidelity_threshold: None,
            shots_per_query: 10,
            measure: MeasureSettings::default(),
            seeds: vec![1],
            eval_every: 2,
            target_accuracy: 0.8,
        }
    }

    fn quantum(strategy: StrategySpec) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig::Quantum {
                n_pool: 60,
                n_test: 30,
                qudit_dim: 2,
                seed: None,
                label_rule: LabelRule::ArgmaxAmplitude,
            },
            ..blobs(strategy)
        }
    }

    #[test]
    fn next_query_is_idempotent_while_pending() {
        let mut e = Engine::start_simulated(blobs(StrategySpec::plain(StrategyKind::Margin)), 4).unwrap();
        let a = e.next_query().unwrap();
        let b = e.next_query().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.round, e.state().history.len());
        assert_eq!(e.state().pending_query, Some(a.sample_id));
    }

    #[test]
    fn stale_submission_leaves_state_unchanged() {
        let mut e = Engine::start_simulated(blobs(StrategySpec::plain(StrategyKind::Entropy)), 4).unwrap();
        let q = e.next_query().unwrap();
        let other = e
            .state()
            .pool
            .unlabeled_ids
            .iter()
            .find(|id| **id != q.sample_id)
            .copied()
            .unwrap();
        let before = e.state().clone();
        assert!(matches!(
            e.submit_label(other, 0, 1.0),
            Err(HarnessError::StaleQuery { .. })
        ));
        assert!(matches!(
            e.submit_label(q.sample_id, 7, 1.0),
            Err(HarnessError::LabelOutOfRange { .. })
        ));
        assert_eq!(e.state(), &before);
        e.submit_label(q.sample_id, 1, 1.0).unwrap();
        assert_eq!(e.state().labels_used(), before.labels_used() + 1);
        assert!(matches!(
            e.submit_label(q.sample_id, 1, 1.0),
            Err(HarnessError::StaleQuery { .. })
        ));
    }

    #[test]
    fn pool_exhaustion() {
        let mut c = blobs(StrategySpec::plain(StrategyKind::LeastConfidence));
        if let DatasetConfig::GaussianBlobs { n_pool, .. } = &mut c.dataset {
            *n_pool = 13;
        }
        let run = run_session(&c, 2).unwrap();
        assert_eq!(run.state.pool.len_unlabeled(), 0);
        assert_eq!(run.termination, Termination::PoolExhausted);
        let mut e = Engine::start_simulated(c, 2).unwrap();
        e.run_to_completion();
        assert_eq!(e.next_query(), Err(HarnessError::PoolExhausted));
    }

    #[test]
    fn every_strategy_runs() {
        let mut specs: Vec<StrategySpec> = StrategyKind::ALL.into_iter().map(StrategySpec::plain).collect();
        specs.push("entropy+density".parse().unwrap());
        specs.push(StrategySpec::with_density(
            StrategyKind::Egl,
            DensityConfig {
                beta: 2.0,
                similarity: Similarity::GaussianKernel,
                sigma: Some(0.7),
            },
        ));
        for spec in specs {
            let run = run_session(&blobs(spec), 8).unwrap();
            assert_eq!(run.termination, Termination::LabelBudget, "{}", spec.name());
            assert_eq!(run.state.labels_used(), 13);
            assert!(run.state.validate().is_empty(), "{}", spec.name());
            assert!(run.state.history[3..].iter().all(|r| r.strategy == spec.name()));
        }
        let infidelity = StrategySpec::with_density(
            StrategyKind::LeastConfidence,
            DensityConfig {
                beta: 1.0,
                similarity: Similarity::QuantumInfidelity,
                sigma: None,
            },
        );
        let run = run_session(&quantum(infidelity), 8).unwrap();
        assert_eq!(run.state.labels_used(), 13);
    }

    #[test]
    fn density_cache_matches_direct_computation() {
        let spec: StrategySpec = "margin+density".parse().unwrap();
        let mut e = Engine::start_simulated(blobs(spec), 5).unwrap();
        for _ in 0..4 {
            e.step().unwrap();
        }
        e.next_query().unwrap();
        let cache = e.density.clone().unwrap();
        let cfg = DensityConfig {
            beta: 1.0,
            similarity: Similarity::GaussianKernel,
            sigma: Some(cache.sigma),
        };
        for id in e.state().pool.unlabeled_ids.iter().take(10) {
            let direct = strategy::density_multiplier(*id, &e.state().pool, &cfg).unwrap();
            assert!((direct - cache.multiplier(*id, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn self_training_is_free_on_quantum_data() {
        let mut c = quantum(StrategySpec::plain(StrategyKind::SelfTraining));
        c.label_budget = 40;
        c.fidelity_threshold = Some(1e3);
        let mut e = Engine::start_simulated(c, 1).unwrap();
        let spent = e.state().ledger.as_ref().unwrap().spent;
        assert!(spent > 0.0);
        assert_eq!(e.run_to_completion(), Termination::LabelBudget);
        assert_eq!(e.state().ledger.as_ref().unwrap().spent, spent);
        assert!(e.state().history[3..].iter().all(|r| r.oracle_cost == 0.0));
    }

    #[test]
    fn fidelity_budget_stops_the_run() {
        let mut c = quantum(StrategySpec::plain(StrategyKind::LeastConfidence));
        c.label_budget = 50;
        c.fidelity_threshold = Some(8.0);
        let run = run_session(&c, 6).unwrap();
        assert_eq!(run.termination, Termination::FidelityBudget);
        let ledger = run.state.ledger.as_ref().unwrap();
        assert!(ledger.spent <= 8.0);
        assert!(ledger.is_consistent());
        assert!(run.state.labels_used() < 53);
        assert!(run.curve.points.iter().all(|p| p.fidelity_spent <= 8.0));
    }

    #[test]
    fn replay_reproduces_state() {
        for spec in ["vote_entropy", "egl", "random"] {
            let c = quantum(spec.parse().unwrap());
            let run = run_session(&c, 12).unwrap();
            let replayed = Engine::replay(c, 12, &run.state.history).unwrap();
            assert_eq!(replayed.state(), &run.state, "{spec}");
        }
    }

    #[test]
    fn external_quantum_labels_are_charged_like_simulated_ones() {
        let c = quantum(StrategySpec::plain(StrategyKind::Margin));
        let mut sim = Engine::start_simulated(c.clone(), 2).unwrap();
        sim.run_to_completion();
        let mut ext = Engine::start_external(c, 2).unwrap();
        for record in &sim.state().history {
            let q = ext.next_query().unwrap();
            assert_eq!(q.sample_id, record.sample_id);
            ext.submit_external(q.sample_id, record.assigned_label).unwrap();
        }
        ext.ensure_trained().unwrap();
        assert_eq!(ext.state(), sim.state());
    }

    #[test]
    fn external_labels_match_simulated_oracle() {
        let c = blobs(StrategySpec::plain(StrategyKind::VoteEntropy));
        let mut sim = Engine::start_simulated(c.clone(), 21).unwrap();
        let mut ext = Engine::start_external(c, 21).unwrap();
        assert_eq!(ext.curve().len(), 1);
        assert_eq!(ext.curve().points[0].labels_used, 0);
        while ext.state().labels_used() < sim.state().labels_used() {
            let q = ext.next_query().unwrap();
            let truth = ext.dataset().truth(q.sample_id).unwrap();
            ext.submit_label(q.sample_id, truth, 1.0).unwrap();
        }
        for _ in 0..5 {
            sim.step().unwrap();
            let q = ext.next_query().unwrap();
            let truth = ext.dataset().truth(q.sample_id).unwrap();
            ext.submit_label(q.sample_id, truth, 1.0).unwrap();
        }
        ext.ensure_trained().unwrap();
        sim.ensure_trained().unwrap();
        assert_eq!(ext.state(), sim.state());
    }
}
