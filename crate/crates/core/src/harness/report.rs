use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_session, ExperimentConfig, HarnessError, LearningCurve, Result, Termination};

pub const CSV_HEADER: [&str; 5] = ["strategy", "seed", "labels_used", "accuracy", "fidelity_spent"];

/// One line of a results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub strategy: String,
    pub seed: u64,
    pub labels_used: usize,
    pub accuracy: f64,
    pub fidelity_spent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(HarnessError::UnsupportedFormat(s.to_string())),
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Json => "json",
        })
    }
}

pub fn curve_rows(strategy: &str, seed: u64, curve: &LearningCurve) -> Vec<CurveRow> {
    curve
        .points
        .iter()
        .map(|p| CurveRow {
            strategy: strategy.to_string(),
            seed,
            labels_used: p.labels_used,
            accuracy: p.accuracy,
            fidelity_spent: p.fidelity_spent,
        })
        .collect()
}

/// Serializes rows with the fixed header. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv(rows: &[CurveRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let io = |e: csv::Error| HarnessError::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Malformed(e.to_string()))
}

pub fn import_csv(text: &str) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| HarnessError::Malformed(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(HarnessError::Malformed(format!("unexpected header {header:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| HarnessError::Malformed(e.to_string())))
        .collect()
}

#[derive(Serialize)]
struct CurveDocument<'a> {
    strategy: &'a str,
    seed: u64,
    points: &'a [super::CurvePoint],
}

/// A single session's curve as CSV rows or a JSON document.
pub fn export_curve(strategy: &str, seed: u64, curve: &LearningCurve, format: ExportFormat) -> Result<String> {
    match format {
        ExportFormat::Csv => write_csv(&curve_rows(strategy, seed, curve)),
        ExportFormat::Json => Ok(serde_json::to_string_pretty(&CurveDocument {
            strategy,
            seed,
            points: &curve.points,
        })
        .expect("curve serializes")),
    }
}

/// Trapezoid area under `(labels_used, accuracy)`.
pub fn aulc(curve: &LearningCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].labels_used - w[0].labels_used) as f64 * (w[0].accuracy + w[1].accuracy) / 2.0)
        .sum()
}

/// Labels used at the first evaluation reaching `target`.
pub fn labels_to_target(curve: &LearningCurve, target: f64) -> Option<usize> {
    curve
        .points
        .iter()
        .find(|p| p.accuracy >= target)
        .map(|p| p.labels_used)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanPoint {
    pub labels_used: usize,
    /// Seeds whose curve has a point at this label count.
    pub seeds: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_fidelity_spent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub aulc: f64,
    pub labels_to_target: Option<usize>,
    pub termination: Termination,
    pub curve: LearningCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub mean_curve: Vec<MeanPoint>,
    pub mean_aulc: f64,
    pub std_aulc: f64,
    /// Mean over the seeds that reached the target.
    pub mean_labels_to_target: Option<f64>,
    pub seeds_reaching_target: usize,
    pub mean_final_accuracy: f64,
    pub runs: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub name: String,
    pub seeds: Vec<u64>,
    pub target_accuracy: f64,
    pub strategies: Vec<StrategySummary>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl StrategySummary {
    fn from_runs(strategy: String, runs: Vec<SeedResult>) -> Self {
        let mut by_labels: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for r in &runs {
            for p in &r.curve.points {
                by_labels
                    .entry(p.labels_used)
                    .or_default()
                    .push((p.accuracy, p.fidelity_spent));
            }
        }
        let mean_curve = by_labels
            .into_iter()
            .map(|(labels_used, v)| {
                let acc: Vec<f64> = v.iter().map(|x| x.0).collect();
                let (mean_accuracy, std_accuracy) = mean_std(&acc);
                MeanPoint {
                    labels_used,
                    seeds: v.len(),
                    mean_accuracy,
                    std_accuracy,
                    mean_fidelity_spent: v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64,
                }
            })
            .collect();
        let aulcs: Vec<f64> = runs.iter().map(|r| r.aulc).collect();
        let (mean_aulc, std_aulc) = mean_std(&aulcs);
        let reached: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.labels_to_target.map(|l| l as f64))
            .collect();
        let finals: Vec<f64> = runs.iter().filter_map(|r| r.curve.last().map(|p| p.accuracy)).collect();
        Self {
            strategy,
            mean_curve,
            mean_aulc,
            std_aulc,
            mean_labels_to_target: (!reached.is_empty()).then(|| mean_std(&reached).0),
            seeds_reaching_target: reached.len(),
            mean_final_accuracy: mean_std(&finals).0,
            runs,
        }
    }

    /// Final accuracy of each seed, in seed-list order.
    pub fn final_accuracies(&self) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| r.curve.last().map_or(f64::NAN, |p| p.accuracy))
            .collect()
    }
}

impl ComparisonReport {
    pub fn strategy(&self, name: &str) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == name)
    }

    /// Per-seed AULC of strategy `a` minus that of `b`.
    pub fn paired_aulc_difference(&self, a: usize, b: usize) -> Vec<f64> {
        let (a, b) = (&self.strategies[a], &self.strategies[b]);
        a.runs.iter().zip(&b.runs).map(|(x, y)| x.aulc - y.aulc).collect()
    }

    pub fn rows(&self) -> Vec<CurveRow> {
        self.strategies
            .iter()
            .flat_map(|s| s.runs.iter().flat_map(|r| curve_rows(&s.strategy, r.seed, &r.curve)))
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Malformed(e.to_string()))
    }
}

pub fn export_report(report: &ComparisonReport, format: ExportFormat) -> Result<String> {
    match format {
        ExportFormat::Csv => write_csv(&report.rows()),
        ExportFormat::Json => Ok(serde_json::to_string_pretty(report).expect("report serializes")),
    }
}

/// Runs every config over the shared seed list, seeds in parallel.
pub fn compare_strategies(configs: &[ExperimentConfig]) -> Result<ComparisonReport> {
    let first = configs
        .first()
        .filter(|_| configs.len() >= 2)
        .ok_or_else(|| HarnessError::ConfigInvalid("comparison needs at least two configs".into()))?;
    if configs
        .iter()
        .any(|c| c.dataset != first.dataset || c.seeds != first.seeds)
    {
        return Err(HarnessError::MismatchedSeeds);
    }
    run_all(configs)
}

/// Runs a single config over its seeds; the report has one strategy.
pub fn run_benchmark(config: &ExperimentConfig) -> Result<ComparisonReport> {
    run_all(std::slice::from_ref(config))
}

fn run_all(configs: &[ExperimentConfig]) -> Result<ComparisonReport> {
    let first = &configs[0];
    if first.seeds.is_empty() {
        return Err(HarnessError::ConfigInvalid("seed list is empty".into()));
    }
    for c in configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.seeds.iter().map(move |s| (i, *s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let run = run_session(&configs[i], seed)?;
            Ok((
                i,
                SeedResult {
                    seed,
                    aulc: aulc(&run.curve),
                    labels_to_target: labels_to_target(&run.curve, configs[i].target_accuracy),
                    termination: run.termination,
                    curve: run.curve,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grouped: Vec<Vec<SeedResult>> = vec![Vec::new(); configs.len()];
    for (i, r) in runs {
        grouped[i].push(r);
    }
    let strategies = configs
        .iter()
        .zip(grouped)
        .map(|(c, runs)| StrategySummary::from_runs(c.strategy.name(), runs))
        .collect();
    Ok(ComparisonReport {
        name: first.name.clone(),
        seeds: first.seeds.clone(),
        target_accuracy: first.target_accuracy,
        strategies,
    })
}

/// Writes `<root>/<name>/<strategy>/<seed>.csv` and `<root>/<name>/report.json`.
pub fn write_results(report: &ComparisonReport, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&report.name);
    for s in &report.strategies {
        let sdir = dir.join(&s.strategy);
        std::fs::create_dir_all(&sdir)?;
        for r in &s.runs {
            let csv = export_curve(&s.strategy, r.seed, &r.curve, ExportFormat::Csv)?;
            std::fs::write(sdir.join(format!("{}.csv", r.seed)), csv)?;
        }
    }
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("report.json"), export_report(report, ExportFormat::Json)?)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::tests::small_quantum;
    use crate::harness::CurvePoint;
    use crate::strategy::{StrategyKind, StrategySpec};

    fn curve(points: &[(usize, f64)]) -> LearningCurve {
        LearningCurve {
            points: points
                .iter()
                .map(|&(labels_used, accuracy)| CurvePoint {
                    labels_used,
                    accuracy,
                    fidelity_spent: 0.1 * labels_used as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn trapezoid_area() {
        assert_eq!(aulc(&curve(&[(10, 0.5)])), 0.0);
        // (0.5 + 0.7) / 2 * 4 + (0.7 + 0.9) / 2 * 2
        let c = curve(&[(10, 0.5), (14, 0.7), (16, 0.9)]);
        assert!((aulc(&c) - 4.0).abs() < 1e-12);
        assert_eq!(labels_to_target(&c, 0.7), Some(14));
        assert_eq!(labels_to_target(&c, 0.95), None);
    }

    #[test]
    fn csv_shapes_and_round_trip() {
        let empty = export_curve("margin", 3, &LearningCurve::default(), ExportFormat::Csv).unwrap();
        assert_eq!(empty, "strategy,seed,labels_used,accuracy,fidelity_spent\n");
        let c = curve(&[(1, 0.1), (2, 1.0 / 3.0), (3, 0.3)]);
        let text = export_curve("margin", 3, &c, ExportFormat::Csv).unwrap();
        assert_eq!(text.lines().count(), 4);
        let rows = import_csv(&text).unwrap();
        assert_eq!(rows[1].accuracy, 1.0 / 3.0);
        assert_eq!(write_csv(&rows).unwrap(), text);
        assert!(import_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn format_parsing() {
        assert_eq!("CSV".parse::<ExportFormat>().unwrap(), ExportFormat::Csv);
        assert_eq!(
            "xml".parse::<ExportFormat>(),
            Err(HarnessError::UnsupportedFormat("xml".into()))
        );
    }

    #[test]
    fn comparison_with_itself_and_mismatch() {
        let a = small_quantum(StrategyKind::Margin);
        let report = compare_strategies(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(report.strategies.len(), 2);
        assert_eq!(report.strategies[0].mean_curve, report.strategies[1].mean_curve);
        assert!(report.paired_aulc_difference(0, 1).iter().all(|d| *d == 0.0));

        let mut b = a.clone();
        b.seeds = vec![9];
        assert_eq!(compare_strategies(&[a.clone(), b]), Err(HarnessError::MismatchedSeeds));
        assert!(compare_strategies(std::slice::from_ref(&a)).is_err());

        let json = export_report(&report, ExportFormat::Json).unwrap();
        let back = ComparisonReport::from_json(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(
            export_report(&back, ExportFormat::Csv).unwrap(),
            export_report(&report, ExportFormat::Csv).unwrap()
        );
    }

    #[test]
    fn results_layout() {
        let a = small_quantum(StrategyKind::Random);
        let mut b = a.clone();
        b.strategy = StrategySpec::plain(StrategyKind::Entropy);
        let report = compare_strategies(&[a, b]).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_results(&report, tmp.path()).unwrap();
        assert!(dir.join("report.json").is_file());
        for s in ["random", "entropy"] {
            for seed in [1, 2] {
                let text = std::fs::read_to_string(dir.join(s).join(format!("{seed}.csv"))).unwrap();
                assert_eq!(import_csv(&text).unwrap().len(), 5);
            }
        }
    }
}
