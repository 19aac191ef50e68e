//! In-memory session table with optional JSON snapshots on disk.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use ol_core::dataset::{DatasetConfig, RenderHint};
use ol_core::harness::{CurvePoint, Engine, ExperimentConfig, LearningCurve, Termination};
use ol_core::session::{SampleId, SessionSnapshot};
use serde::{Deserialize, Serialize};

use crate::error::GatewayError;

pub type Result<T> = std::result::Result<T, GatewayError>;

/// Points returned with label metrics.
pub const CURVE_TAIL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SimulatedOracle,
    #[default]
    HumanOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub labels: usize,
    /// `null` when the session has no fidelity threshold.
    pub fidelity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPayload {
    pub sample_id: SampleId,
    pub features: Vec<f64>,
    pub render_hint: RenderHint,
    pub strategy_score: f64,
    pub round: usize,
    pub labels_used: usize,
    pub budget_remaining: Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub labels_used: usize,
    pub current_accuracy: f64,
    pub curve_tail: Vec<CurvePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub mode: Mode,
    pub seed: u64,
    pub strategy: String,
    pub k_classes: usize,
    pub class_labels: Vec<String>,
    pub render_hint: RenderHint,
    pub labels_used: usize,
    pub budget_remaining: Budget,
    pub pending_query: Option<SampleId>,
    pub curve: LearningCurve,
}

#[derive(Serialize)]
struct SnapshotFile<'a> {
    session_id: &'a str,
    created_at: DateTime<Utc>,
    mode: Mode,
    seed: u64,
    config: &'a ExperimentConfig,
    curve: &'a LearningCurve,
    state: SessionSnapshot,
}

pub struct SessionHandle {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub mode: Mode,
    pub engine: Engine,
}

fn class_labels(config: &DatasetConfig, k: usize) -> Vec<String> {
    (0..k)
        .map(|i| {
            if config.is_quantum() {
                format!("|{i}\u{27e9}-dominant")
            } else {
                format!("class {i}")
            }
        })
        .collect()
}

impl SessionHandle {
    pub fn budget(&self) -> Budget {
        Budget {
            labels: self.engine.labels_remaining(),
            fidelity: self
                .engine
                .config()
                .fidelity_threshold
                .and(self.engine.fidelity_remaining()),
        }
    }

    pub fn view(&self) -> SessionView {
        let e = &self.engine;
        SessionView {
            session_id: self.session_id.clone(),
            created_at: self.created_at,
            mode: self.mode,
            seed: e.seed(),
            strategy: e.config().strategy.name(),
            k_classes: e.state().k_classes,
            class_labels: class_labels(&e.config().dataset, e.state().k_classes),
            render_hint: e.render_hint(),
            labels_used: e.state().labels_used(),
            budget_remaining: self.budget(),
            pending_query: e.state().pending_query,
            curve: e.curve().clone(),
        }
    }

    pub fn next_query(&mut self) -> Result<QueryPayload> {
        let q = self.engine.next_query()?;
        let sample = self
            .engine
            .state()
            .pool
            .sample(q.sample_id)
            .expect("pending query is in the pool");
        Ok(QueryPayload {
            sample_id: q.sample_id,
            features: sample.features.clone(),
            render_hint: self.engine.render_hint(),
            strategy_score: q.score,
            round: q.round,
            labels_used: self.engine.state().labels_used(),
            budget_remaining: self.budget(),
        })
    }

    pub fn metrics(&mut self) -> Result<Metrics> {
        let current_accuracy = self.engine.current_accuracy()?;
        let points = &self.engine.curve().points;
        Ok(Metrics {
            labels_used: self.engine.state().labels_used(),
            current_accuracy,
            curve_tail: points[points.len().saturating_sub(CURVE_TAIL)..].to_vec(),
            termination: self.engine.termination().cloned(),
        })
    }

    pub fn submit_label(&mut self, sample_id: SampleId, label: usize) -> Result<Metrics> {
        self.engine.submit_external(sample_id, label)?;
        self.metrics()
    }

    /// Lets the simulated oracle answer up to `steps` queries, or until
    /// the session stops when `steps` is `None`.
    pub fn auto_label(&mut self, steps: Option<usize>) -> Result<Metrics> {
        if self.mode == Mode::HumanOracle {
            return Err(GatewayError::ModeMismatch(self.session_id.clone()));
        }
        match steps {
            None => {
                self.engine.run_to_completion();
            }
            Some(n) => {
                for _ in 0..n {
                    if self.engine.step().is_err() {
                        self.engine.run_to_completion();
                        break;
                    }
                }
            }
        }
        self.metrics()
    }

    fn snapshot_json(&self) -> String {
        let file = SnapshotFile {
            session_id: &self.session_id,
            created_at: self.created_at,
            mode: self.mode,
            seed: self.engine.seed(),
            config: self.engine.config(),
            curve: self.engine.curve(),
            state: SessionSnapshot::from(self.engine.state()),
        };
        serde_json::to_string_pretty(&file).expect("snapshot serializes")
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateRequest {
    pub config: ExperimentConfig,
    #[serde(default)]
    pub mode: Mode,
    /// Defaults to the first seed of the config.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Default)]
pub struct Registry {
    sessions: RwLock<HashMap<String, Arc<RwLock<SessionHandle>>>>,
    data_dir: Option<PathBuf>,
}

impl Registry {
    pub fn new(data_dir: Option<PathBuf>) -> Self {
        Self {
            sessions: RwLock::default(),
            data_dir,
        }
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    pub fn create(&self, request: CreateRequest) -> Result<SessionView> {
        let seed = request
            .seed
            .or_else(|| request.config.seeds.first().copied())
            .unwrap_or(0);
        let engine = match request.mode {
            Mode::SimulatedOracle => Engine::start_simulated(request.config, seed)?,
            Mode::HumanOracle => Engine::start_external(request.config, seed)?,
        };
        let handle = SessionHandle {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            created_at: Utc::now(),
            mode: request.mode,
            engine,
        };
        self.persist(&handle)?;
        let view = handle.view();
        self.sessions
            .write()
            .expect("session table lock")
            .insert(handle.session_id.clone(), Arc::new(RwLock::new(handle)));
        Ok(view)
    }

    pub fn get(&self, id: &str) -> Result<Arc<RwLock<SessionHandle>>> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownSession(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session table lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads a session without blocking other readers.
    pub fn read<T>(&self, id: &str, f: impl FnOnce(&SessionHandle) -> Result<T>) -> Result<T> {
        let handle = self.get(id)?;
        let guard = handle.read().expect("session lock");
        f(&guard)
    }

    /// Mutates a session under its write lock, then rewrites its snapshot.
    pub fn update<T>(&self, id: &str, f: impl FnOnce(&mut SessionHandle) -> Result<T>) -> Result<T> {
        let handle = self.get(id)?;
        let mut guard = handle.write().expect("session lock");
        let round = guard.engine.state().round;
        let out = f(&mut guard);
        if guard.engine.state().round != round || out.is_ok() {
            self.persist(&guard)?;
        }
        out
    }

    pub fn snapshot_path(&self, id: &str) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    fn persist(&self, handle: &SessionHandle) -> Result<()> {
        let Some(path) = self.snapshot_path(&handle.session_id) else {
            return Ok(());
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, handle.snapshot_json())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}
