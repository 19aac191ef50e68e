//! Seeded dataset generators.
//!
//! Classical datasets are isotropic Gaussian blobs whose centers sit on a
//! circle in the first two feature dimensions. Quantum datasets are
//! random pure states labeled by their dominant basis amplitude; qubits
//! are drawn uniformly on the Bloch sphere and exposed to the learner as
//! Bloch coordinates, qudits as squared moduli.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{self, PureState};
use crate::rng::{self, Stream};
use crate::session::{Sample, SampleId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("invalid dataset config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    #[default]
    ArgmaxAmplitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    GaussianBlobs {
        n_pool: usize,
        n_test: usize,
        n_classes: usize,
        #[serde(default = "default_blob_dim")]
        dim: usize,
        /// Radius of the circle carrying the class centers.
        separation: f64,
        /// Per-coordinate standard deviation around each center.
        spread: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Quantum {
        n_pool: usize,
        n_test: usize,
        #[serde(default = "default_qudit_dim")]
        qudit_dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default)]
        label_rule: LabelRule,
    },
}

fn default_blob_dim() -> usize {
    2
}

fn default_qudit_dim() -> usize {
    2
}

/// How a sample should be drawn for a human annotator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderHint {
    Scatter2d,
    Bloch,
    Bar,
}

impl DatasetConfig {
    pub fn n_pool(&self) -> usize {
        match self {
            DatasetConfig::GaussianBlobs { n_pool, .. } | DatasetConfig::Quantum { n_pool, .. } => *n_pool,
        }
    }

    pub fn n_test(&self) -> usize {
        match self {
            DatasetConfig::GaussianBlobs { n_test, .. } | DatasetConfig::Quantum { n_test, .. } => *n_test,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            DatasetConfig::GaussianBlobs { seed, .. } | DatasetConfig::Quantum { seed, .. } => *seed,
        }
    }

    pub fn is_quantum(&self) -> bool {
        matches!(self, DatasetConfig::Quantum { .. })
    }

    pub fn k_classes(&self) -> usize {
        match self {
            DatasetConfig::GaussianBlobs { n_classes, .. } => *n_classes,
            DatasetConfig::Quantum { qudit_dim, .. } => *qudit_dim,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            DatasetConfig::GaussianBlobs { dim, .. } => *dim,
            DatasetConfig::Quantum { qudit_dim: 2, .. } => 3,
            DatasetConfig::Quantum { qudit_dim, .. } => *qudit_dim,
        }
    }

    pub fn render_hint(&self) -> RenderHint {
        match self {
            DatasetConfig::GaussianBlobs { .. } => RenderHint::Scatter2d,
            DatasetConfig::Quantum { qudit_dim: 2, .. } => RenderHint::Bloch,
            DatasetConfig::Quantum { .. } => RenderHint::Bar,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Invalid(m.to_string()));
        if self.n_pool() == 0 {
            return bad("n_pool must be positive");
        }
        if self.n_test() == 0 {
            return bad("n_test must be positive");
        }
        match self {
            DatasetConfig::GaussianBlobs {
                n_classes,
                dim,
                separation,
                spread,
                ..
            } => {
                if *n_classes < 2 {
                    return bad("n_classes must be at least 2");
                }
                if *dim < 2 {
                    return bad("blob dim must be at least 2");
                }
                if !(separation.is_finite() && *separation >= 0.0) {
                    return bad("separation must be finite and >= 0");
                }
                if !(spread.is_finite() && *spread > 0.0) {
                    return bad("spread must be > 0");
                }
            }
            DatasetConfig::Quantum { qudit_dim, .. } => {
                if *qudit_dim < 2 {
                    return bad("qudit_dim must be at least 2");
                }
            }
        }
        Ok(())
    }
}

/// A generated pool plus held-out test set with ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub k_classes: usize,
    pub dim: usize,
    pub render_hint: RenderHint,
    pub pool: Vec<Sample>,
    pub pool_labels: Vec<usize>,
    /// Quantum states referenced by `Sample::quantum_ref`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<PureState>,
    pub test_features: Vec<Vec<f64>>,
    pub test_labels: Vec<usize>,
}

impl Dataset {
    pub fn truth(&self, id: SampleId) -> Option<usize> {
        self.pool_labels.get(id.0 as usize).copied()
    }
}

struct Point {
    features: Vec<f64>,
    label: usize,
    state: Option<PureState>,
}

/// Uniform on the sphere: `theta = arccos(1 - 2u)`, `phi = 2 pi v`.
fn random_qubit<R: Rng>(rng: &mut R) -> Point {
    let u: f64 = rng.gen();
    let v: f64 = rng.gen();
    let theta = (1.0 - 2.0 * u).clamp(-1.0, 1.0).acos();
    let phi = 2.0 * PI * v;
    let state = quantum::prepare_qubit(theta, phi).expect("angles in range");
    let features = quantum::bloch_features(theta, phi).expect("angles in range").to_vec();
    Point {
        label: quantum::true_label(&state),
        features,
        state: Some(state),
    }
}

/// Haar-random qudit from normalized complex Gaussians.
fn random_qudit<R: Rng>(rng: &mut R, dim: usize) -> Point {
    loop {
        let raw: Vec<Complex64> = (0..dim)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        if let Ok(state) = quantum::prepare_qudit(raw) {
            return Point {
                label: quantum::true_label(&state),
                features: state.probabilities(),
                state: Some(state),
            };
        }
    }
}

fn blob_point<R: Rng>(rng: &mut R, n_classes: usize, dim: usize, separation: f64, spread: f64) -> Point {
    let label = rng.gen_range(0..n_classes);
    let angle = 2.0 * PI * label as f64 / n_classes as f64;
    let mut features: Vec<f64> = (0..dim)
        .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
        .collect();
    features[0] += separation * angle.cos();
    features[1] += separation * angle.sin();
    Point {
        features,
        label,
        state: None,
    }
}

/// Generates the dataset for `seed`. Pool ids follow insertion order.
pub fn generate(config: &DatasetConfig, seed: u64) -> Result<Dataset, DatasetError> {
    config.validate()?;
    let mut rng = rng::derive(seed, Stream::Dataset, 0);
    let total = config.n_pool() + config.n_test();
    let mut draw = || match config {
        DatasetConfig::GaussianBlobs {
            n_classes,
            dim,
            separation,
            spread,
            ..
        } => blob_point(&mut rng, *n_classes, *dim, *separation, *spread),
        DatasetConfig::Quantum { qudit_dim: 2, .. } => random_qubit(&mut rng),
        DatasetConfig::Quantum { qudit_dim, .. } => random_qudit(&mut rng, *qudit_dim),
    };
    let points: Vec<Point> = (0..total).map(|_| draw()).collect();
    let (pool_points, test_points) = points.split_at(config.n_pool());

    let mut states = Vec::new();
    let mut pool = Vec::with_capacity(pool_points.len());
    let mut pool_labels = Vec::with_capacity(pool_points.len());
    for (i, p) in pool_points.iter().enumerate() {
        let quantum_ref = p.state.as_ref().map(|s| {
            states.push(s.clone());
            states.len() - 1
        });
        pool.push(Sample {
            id: SampleId(i as u64),
            features: p.features.clone(),
            quantum_ref,
        });
        pool_labels.push(p.label);
    }
    Ok(Dataset {
        k_classes: config.k_classes(),
        dim: config.feature_dim(),
        render_hint: config.render_hint(),
        pool,
        pool_labels,
        states,
        test_features: test_points.iter().map(|p| p.features.clone()).collect(),
        test_labels: test_points.iter().map(|p| p.label).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qubits(n_pool: usize) -> DatasetConfig {
        DatasetConfig::Quantum {
            n_pool,
            n_test: 10,
            qudit_dim: 2,
            seed: None,
            label_rule: LabelRule::ArgmaxAmplitude,
        }
    }

    #[test]
    fn qubit_dataset_shape_and_labels() {
        let d = generate(&qubits(50), 3).unwrap();
        assert_eq!(d.pool.len(), 50);
        assert_eq!(d.test_features.len(), 10);
        assert_eq!(d.dim, 3);
        assert_eq!(d.render_hint, RenderHint::Bloch);
        for (s, y) in d.pool.iter().zip(&d.pool_labels) {
            let z = s.features[2];
            assert_eq!(*y, if z >= 0.0 { 0 } else { 1 });
            let state = &d.states[s.quantum_ref.unwrap()];
            assert_eq!(quantum::true_label(state), *y);
        }
        assert!(d.pool.iter().enumerate().all(|(i, s)| s.id == SampleId(i as u64)));
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(generate(&qubits(20), 9).unwrap(), generate(&qubits(20), 9).unwrap());
        assert_ne!(generate(&qubits(20), 9).unwrap(), generate(&qubits(20), 10).unwrap());
    }

    #[test]
    fn qudit_features_are_probabilities() {
        let cfg = DatasetConfig::Quantum {
            n_pool: 30,
            n_test: 5,
            qudit_dim: 4,
            seed: None,
            label_rule: LabelRule::ArgmaxAmplitude,
        };
        let d = generate(&cfg, 1).unwrap();
        assert_eq!(d.render_hint, RenderHint::Bar);
        for (s, y) in d.pool.iter().zip(&d.pool_labels) {
            assert!((s.features.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(crate::argmax(&s.features), Some(*y));
        }
    }

    #[test]
    fn blobs_cover_all_classes() {
        let cfg = DatasetConfig::GaussianBlobs {
            n_pool: 300,
            n_test: 30,
            n_classes: 3,
            dim: 2,
            separation: 3.0,
            spread: 0.5,
            seed: None,
        };
        let d = generate(&cfg, 4).unwrap();
        for c in 0..3 {
            assert!(d.pool_labels.contains(&c));
        }
        assert!(d.states.is_empty());
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&qubits(0), 1).is_err());
        let cfg = DatasetConfig::GaussianBlobs {
            n_pool: 10,
            n_test: 10,
            n_classes: 1,
            dim: 2,
            separation: 1.0,
            spread: 1.0,
            seed: None,
        };
        assert!(generate(&cfg, 1).is_err());
    }

    #[test]
    fn config_json_shape() {
        let cfg: DatasetConfig = serde_json::from_str(
            r#"{"kind":"quantum","n_pool":2000,"n_test":500,"qudit_dim":2,"seed":7,"label_rule":"argmax_amplitude"}"#,
        )
        .unwrap();
        assert_eq!(cfg.seed(), Some(7));
        assert_eq!(cfg.k_classes(), 2);
    }
}
