use ol_core::dataset::{self, DatasetConfig, LabelRule};
use ol_core::harness::{
    compare_strategies, evaluate_accuracy, export_curve, import_csv, run_session, write_csv, Engine, ExperimentConfig,
    ExportFormat, MeasureSettings,
};
use ol_core::learner::{ModelParams, TrainConfig};
use ol_core::session::SessionState;
use ol_core::strategy::{StrategyKind, StrategySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_blobs(kind: StrategyKind) -> ExperimentConfig {
    ExperimentConfig {
        name: "two-blobs".into(),
        dataset: DatasetConfig::GaussianBlobs {
            n_pool: 500,
            n_test: 200,
            n_classes: 2,
            dim: 2,
            separation: 2.5,
            spread: 0.8,
            seed: None,
        },
        strategy: StrategySpec::plain(kind),
        learner: TrainConfig::default(),
        committee: None,
        init_labels: 5,
        label_budget: 30,
        fidelity_threshold: None,
        shots_per_query: 25,
        measure: MeasureSettings::default(),
        seeds: (100..120).collect(),
        eval_every: 5,
        target_accuracy: 0.95,
    }
}

#[test]
fn least_confidence_keeps_up_with_random_on_separable_blobs() {
    let report = compare_strategies(&[
        two_blobs(StrategyKind::LeastConfidence),
        two_blobs(StrategyKind::Random),
    ])
    .unwrap();
    let (lc, rnd) = (&report.strategies[0], &report.strategies[1]);
    assert!(
        lc.mean_final_accuracy >= rnd.mean_final_accuracy,
        "{} < {}",
        lc.mean_final_accuracy,
        rnd.mean_final_accuracy
    );
    // Same dataset and initial labels per seed: the first points coincide.
    for (a, b) in lc.runs.iter().zip(&rnd.runs) {
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.curve.points[0], b.curve.points[0]);
    }
    assert_eq!(report.strategies.len(), 2);
}

#[test]
fn uniform_model_scores_one_half_on_balanced_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<Vec<f64>> = (0..10_000).map(|_| vec![rng.gen::<f64>()]).collect();
    let ys: Vec<usize> = (0..10_000).map(|i| i % 2).collect();
    // All-zero weights tie every class, so class 0 is always predicted.
    let acc = evaluate_accuracy(&ModelParams::zeros(2, 1), &xs, &ys).unwrap();
    assert_eq!(acc, 0.5);
    let random_labels: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..2)).collect();
    let w = ModelParams::from_weights(2, 1, vec![1.0, -0.5, -1.0, 0.5]).unwrap();
    let acc = evaluate_accuracy(&w, &xs, &random_labels).unwrap();
    assert!((acc - 0.5).abs() <= 0.02, "{acc}");
}

#[test]
fn same_strategy_twice_has_zero_paired_difference() {
    let c = two_blobs(StrategyKind::Entropy);
    let report = compare_strategies(&[c.clone(), c]).unwrap();
    assert_eq!(report.strategies[0].mean_curve, report.strategies[1].mean_curve);
    assert!(report.paired_aulc_difference(0, 1).iter().all(|d| *d == 0.0));
}

#[test]
fn curve_invariants_hold_for_every_strategy() {
    for kind in StrategyKind::ALL {
        let mut c = two_blobs(kind);
        c.committee = Some(ol_core::harness::CommitteeConfig {
            size: 3,
            resample: true,
        });
        let run = run_session(&c, 4).unwrap();
        let labels: Vec<usize> = run.curve.points.iter().map(|p| p.labels_used).collect();
        assert!(labels.windows(2).all(|w| w[0] < w[1]), "{kind}: {labels:?}");
        assert!(run.curve.points.iter().all(|p| (0.0..=1.0).contains(&p.accuracy)));
        assert_eq!(run.state.history.len(), run.state.labels_used());
        assert!(run.state.labels_used() <= c.total_labels());
    }
}

#[test]
fn csv_round_trip_is_byte_identical() {
    let c = two_blobs(StrategyKind::Margin);
    let run = run_session(&c, 1).unwrap();
    let text = export_curve("margin", 1, &run.curve, ExportFormat::Csv).unwrap();
    assert!(text.starts_with("strategy,seed,labels_used,accuracy,fidelity_spent\n"));
    assert_eq!(text.lines().count(), run.curve.len() + 1);
    assert_eq!(write_csv(&import_csv(&text).unwrap()).unwrap(), text);
}

#[test]
fn snapshot_restores_an_engine_session() {
    let mut c = two_blobs(StrategyKind::VoteEntropy);
    c.committee = Some(ol_core::harness::CommitteeConfig {
        size: 3,
        resample: false,
    });
    let run = run_session(&c, 9).unwrap();
    let json = run.state.to_snapshot_json();
    let restored = SessionState::from_snapshot_json(&json).unwrap();
    assert_eq!(restored, run.state);
    let replayed = Engine::replay(c, 9, &restored.history).unwrap();
    assert_eq!(replayed.state(), &run.state);
}

#[test]
fn qudit_sessions_label_by_dominant_amplitude() {
    let cfg = DatasetConfig::Quantum {
        n_pool: 300,
        n_test: 100,
        qudit_dim: 3,
        seed: None,
        label_rule: LabelRule::ArgmaxAmplitude,
    };
    let data = dataset::generate(&cfg, 5).unwrap();
    for (s, y) in data.pool.iter().zip(&data.pool_labels) {
        let top = s
            .features
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > s.features[best] { i } else { best });
        assert_eq!(top, *y);
    }
    let mut c = two_blobs(StrategyKind::Entropy);
    c.dataset = cfg;
    c.fidelity_threshold = Some(40.0);
    let run = run_session(&c, 5).unwrap();
    let ledger = run.state.ledger.unwrap();
    assert!(ledger.spent > 0.0 && ledger.spent <= 40.0);
}

#[test]
fn shipped_configs_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 4);
}
