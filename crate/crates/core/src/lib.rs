//! Pool-based active learning.
//!
//! The crate is organised around the query loop: a [`session::SessionState`]
//! tracks the unlabeled pool and the growing training set, a
//! [`learner`] supplies class probabilities and loss gradients, the
//! [`strategy`] module turns those into acquisition scores, and an oracle
//! (ground truth for classical data, simulated measurement for
//! [`quantum`] samples) answers each query. [`harness`] drives complete
//! seeded sessions and aggregates learning curves.

pub mod dataset;
pub mod harness;
pub mod learner;
pub mod quantum;
pub mod rng;
pub mod session;
pub mod strategy;

pub use harness::{Engine, ExperimentConfig, LearningCurve};
pub use learner::{ClassDistribution, ModelParams, TrainConfig};
pub use session::{SampleId, SessionState};
pub use strategy::{StrategyKind, StrategySpec};

/// Index of the largest entry, ties resolved to the lowest index.
///
/// Returns `None` for an empty slice.
pub(crate) fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::argmax;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), Some(0));
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), Some(1));
        assert_eq!(argmax(&[]), None);
    }
}
