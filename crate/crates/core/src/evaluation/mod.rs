//! Evaluation of success predictors against held-out outcomes: metric
//! computation, repeated-trial resampling, the epsilon sweep and the planted
//! synthetic generator used to check the whole pipeline.

pub mod metrics;
pub mod sweep;
pub mod synthetic;

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{knn_predict_matrix, KnnConfig};
use crate::embeddings::{benchmark_vector, ModelEmbeddings, PerformanceMatrix, PromptMatrix};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use metrics::{
    binary_accuracy, pearson, roc_auc, roc_curve, select_model, select_models,
    selection_accuracy, selection_recall, trapezoid_area, LabeledScores,
};
pub use sweep::{epsilon_sweep, SweepRow};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

/// Benchmark id of every target prompt, indexed by prompt position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    benchmark_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkGroup {
    pub id: String,
    pub members: Vec<usize>,
}

impl Manifest {
    /// Builds from `(prompt_index, benchmark_id)` pairs in any order. Every
    /// index in `0..len` must appear exactly once.
    pub fn new(entries: Vec<(usize, String)>) -> Result<Self> {
        let n = entries.len();
        let mut slots: Vec<Option<String>> = vec![None; n];
        for (idx, id) in entries {
            if idx >= n {
                return Err(Error::input(format!(
                    "manifest prompt index {idx} out of range for {n} entries"
                )));
            }
            if id.is_empty() || id.contains(['\t', '\n', '\r']) {
                return Err(Error::input(format!(
                    "benchmark id {id:?} for prompt {idx} is empty or contains a tab/newline"
                )));
            }
            if slots[idx].replace(id).is_some() {
                return Err(Error::input(format!("duplicate manifest prompt index {idx}")));
            }
        }
        Ok(Manifest {
            benchmark_ids: slots.into_iter().map(|s| s.expect("all slots filled")).collect(),
        })
    }

    pub fn from_ids(benchmark_ids: Vec<String>) -> Result<Self> {
        Manifest::new(benchmark_ids.into_iter().enumerate().collect())
    }

    pub fn len(&self) -> usize {
        self.benchmark_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.benchmark_ids.is_empty()
    }

    pub fn benchmark_ids(&self) -> &[String] {
        &self.benchmark_ids
    }

    /// Benchmarks in order of first appearance.
    pub fn groups(&self) -> Vec<BenchmarkGroup> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<BenchmarkGroup> = Vec::new();
        for (j, id) in self.benchmark_ids.iter().enumerate() {
            let g = *index.entry(id.as_str()).or_insert_with(|| {
                groups.push(BenchmarkGroup {
                    id: id.clone(),
                    members: Vec::new(),
                });
                groups.len() - 1
            });
            groups[g].members.push(j);
        }
        groups
    }

    pub fn select(&self, indices: &[usize]) -> Result<Manifest> {
        let ids = indices
            .iter()
            .map(|&j| {
                self.benchmark_ids.get(j).cloned().ok_or_else(|| {
                    Error::input(format!("manifest index {j} out of range for {}", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Manifest { benchmark_ids: ids })
    }
}

/// Anything that scores every model on every target prompt.
pub trait Predictor: Sync {
    fn n_models(&self) -> usize;

    /// M×T score matrix; larger means more likely to succeed and a positive
    /// score predicts success.
    fn score_matrix(&self, targets: &PromptMatrix) -> Result<Matrix>;

    /// M×B benchmark-level scores. Defaults to the mean of per-prompt scores
    /// over each benchmark's members.
    fn benchmark_scores(
        &self,
        _targets: &PromptMatrix,
        scores: &Matrix,
        groups: &[BenchmarkGroup],
    ) -> Result<Matrix> {
        let mut data = Vec::with_capacity(scores.rows() * groups.len());
        for i in 0..scores.rows() {
            let row = scores.row(i);
            data.extend(groups.iter().map(|g| {
                g.members.iter().map(|&j| row[j]).sum::<f64>() / g.members.len() as f64
            }));
        }
        Matrix::new(scores.rows(), groups.len(), data)
    }
}

impl Predictor for ModelEmbeddings {
    fn n_models(&self) -> usize {
        ModelEmbeddings::n_models(self)
    }

    fn score_matrix(&self, targets: &PromptMatrix) -> Result<Matrix> {
        self.predict_matrix(targets)
    }

    /// Scores each model against the averaged benchmark vector.
    fn benchmark_scores(
        &self,
        targets: &PromptMatrix,
        _scores: &Matrix,
        groups: &[BenchmarkGroup],
    ) -> Result<Matrix> {
        let vectors = groups
            .iter()
            .map(|g| benchmark_vector(targets, &g.members))
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(self.n_models() * groups.len());
        for i in 0..ModelEmbeddings::n_models(self) {
            for v in &vectors {
                data.push(self.benchmark_score(i, v)?);
            }
        }
        Matrix::new(ModelEmbeddings::n_models(self), groups.len(), data)
    }
}

/// kNN baseline. Success rates `r ∈ [0, 1]` are reported as `2r − 1` so the
/// shared "positive predicts success" convention becomes `r > 0.5`; the map
/// is increasing and leaves rankings and AUC unchanged.
pub struct KnnPredictor<'a> {
    pub prompts: &'a PromptMatrix,
    pub performance: &'a PerformanceMatrix,
    pub config: KnnConfig,
}

impl Predictor for KnnPredictor<'_> {
    fn n_models(&self) -> usize {
        self.performance.n_models()
    }

    fn score_matrix(&self, targets: &PromptMatrix) -> Result<Matrix> {
        let rates = knn_predict_matrix(self.prompts, self.performance, targets, &self.config)?;
        Ok(rates.scale(2.0).add_scalar(-1.0))
    }
}

/// Static baseline: every model scores its source success rate (as
/// `2r − 1`) on every prompt, so selection always picks the best source
/// performer.
pub struct BestSourcePredictor {
    scores: Vec<f64>,
}

impl BestSourcePredictor {
    pub fn new(source_perf: &PerformanceMatrix) -> Result<Self> {
        if source_perf.n_prompts() == 0 {
            return Err(Error::input("best source performer needs source outcomes"));
        }
        let n = source_perf.n_prompts() as f64;
        let scores = (0..source_perf.n_models())
            .map(|i| 2.0 * (source_perf.success_count(i) as f64 / n) - 1.0)
            .collect();
        Ok(BestSourcePredictor { scores })
    }
}

impl Predictor for BestSourcePredictor {
    fn n_models(&self) -> usize {
        self.scores.len()
    }

    fn score_matrix(&self, targets: &PromptMatrix) -> Result<Matrix> {
        let t = targets.len();
        let data = self
            .scores
            .iter()
            .flat_map(|&s| std::iter::repeat_n(s, t))
            .collect();
        Matrix::new(self.scores.len(), t, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub benchmark_id: String,
    pub n_prompts: usize,
    /// Correlation across models; `None` when undefined (e.g. all models
    /// have equal accuracy on this benchmark).
    pub correlation: Option<f64>,
}

/// Headline metrics of one evaluation. A `None` metric is undefined on this
/// data (single-class labels, zero variance, no solvable prompt).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auc: Option<f64>,
    pub accuracy: f64,
    /// Pearson correlation pooled over every (model, benchmark) pair.
    pub benchmark_score_correlation: Option<f64>,
    pub selection_accuracy: f64,
    pub selection_recall: Option<f64>,
    pub per_benchmark: Vec<BenchmarkRow>,
}

pub const METRIC_NAMES: [&str; 5] = [
    "auc",
    "accuracy",
    "benchmark_score_correlation",
    "selection_accuracy",
    "selection_recall",
];

impl EvalReport {
    /// Headline metrics in [`METRIC_NAMES`] order.
    pub fn headline(&self) -> [Option<f64>; 5] {
        [
            self.auc,
            Some(self.accuracy),
            self.benchmark_score_correlation,
            Some(self.selection_accuracy),
            self.selection_recall,
        ]
    }

    /// Fails with [`Error::UndefinedMetric`] naming the first undefined
    /// headline metric.
    pub fn require_defined(&self) -> Result<()> {
        match METRIC_NAMES
            .iter()
            .zip(self.headline())
            .find(|(_, v)| v.is_none())
        {
            Some((name, _)) => Err(Error::undefined(name, "undefined on this evaluation data")),
            None => Ok(()),
        }
    }

    pub fn to_rows(&self) -> Vec<ReportRow> {
        let mut rows: Vec<ReportRow> = METRIC_NAMES
            .iter()
            .zip(self.headline())
            .map(|(name, value)| ReportRow {
                metric: name.to_string(),
                value,
                stddev: None,
                benchmark_id: None,
            })
            .collect();
        rows.extend(self.per_benchmark.iter().map(|b| ReportRow {
            metric: "benchmark_score_correlation".to_string(),
            value: b.correlation,
            stddev: None,
            benchmark_id: Some(b.benchmark_id.clone()),
        }));
        rows
    }
}

/// One line of a CSV report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub value: Option<f64>,
    pub stddev: Option<f64>,
    pub benchmark_id: Option<String>,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores `predictor` on the targets and computes every metric.
pub fn evaluate(
    predictor: &dyn Predictor,
    targets: &PromptMatrix,
    target_perf: &PerformanceMatrix,
    manifest: &Manifest,
) -> Result<EvalReport> {
    let t = targets.len();
    if t == 0 {
        return Err(Error::input("evaluation needs at least one target prompt"));
    }
    if target_perf.n_prompts() != t {
        return Err(Error::dims("target outcomes", t, target_perf.n_prompts()));
    }
    if manifest.len() != t {
        return Err(Error::dims("manifest", t, manifest.len()));
    }
    if target_perf.n_models() != predictor.n_models() {
        return Err(Error::dims(
            "target outcome models",
            predictor.n_models(),
            target_perf.n_models(),
        ));
    }

    let scores = predictor.score_matrix(targets)?;
    let pooled = LabeledScores::pooled(&scores, target_perf)?;
    let auc = defined(roc_auc(&pooled))?;
    let accuracy = binary_accuracy(&pooled)?;

    let groups = manifest.groups();
    let bench_scores = predictor.benchmark_scores(targets, &scores, &groups)?;
    let m = target_perf.n_models();
    let mut truth = Vec::with_capacity(m * groups.len());
    for i in 0..m {
        let row = target_perf.row(i);
        truth.extend(groups.iter().map(|g| {
            let hits = g.members.iter().filter(|&&j| row[j] == 1).count();
            hits as f64 / g.members.len() as f64
        }));
    }
    let benchmark_score_correlation = defined(pearson(bench_scores.as_slice(), &truth))?;
    let per_benchmark = groups
        .iter()
        .enumerate()
        .map(|(b, g)| {
            let x: Vec<f64> = (0..m).map(|i| bench_scores.get(i, b)).collect();
            let y: Vec<f64> = (0..m).map(|i| truth[i * groups.len() + b]).collect();
            Ok(BenchmarkRow {
                benchmark_id: g.id.clone(),
                n_prompts: g.members.len(),
                correlation: defined(pearson(&x, &y))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let selections = select_models(&scores)?;
    let selection_accuracy = selection_accuracy(&selections, target_perf)?;
    let selection_recall = defined(selection_recall(&selections, target_perf))?;

    Ok(EvalReport {
        auc,
        accuracy,
        benchmark_score_correlation,
        selection_accuracy,
        selection_recall,
        per_benchmark,
    })
}

/// Per-trial reports and their mean ± standard deviation.
#[derive(Debug, Clone)]
pub struct TrialReport {
    pub trials: Vec<EvalReport>,
    pub rows: Vec<ReportRow>,
}

impl TrialReport {
    pub fn require_defined(&self) -> Result<()> {
        self.trials.iter().try_for_each(EvalReport::require_defined)
    }
}

/// Repeats [`evaluate`] on `trials` target subsets of `sample_size` prompts,
/// each drawn without replacement from a ChaCha8 stream seeded with `seed`.
///
/// A single trial with no sample size evaluates every target once and
/// reports no standard deviation. Otherwise headline metrics are averaged
/// across trials (undefined if any trial is undefined) and per-benchmark
/// correlations across the trials where they are defined. Standard
/// deviations are population (divide by the trial count).
pub fn evaluate_trials(
    predictor: &dyn Predictor,
    targets: &PromptMatrix,
    target_perf: &PerformanceMatrix,
    manifest: &Manifest,
    trials: usize,
    sample_size: Option<usize>,
    seed: u64,
) -> Result<TrialReport> {
    if trials == 0 {
        return Err(Error::input("trial count must be at least 1"));
    }
    let t = targets.len();
    if trials == 1 && sample_size.is_none() {
        let report = evaluate(predictor, targets, target_perf, manifest)?;
        let rows = report.to_rows();
        return Ok(TrialReport {
            trials: vec![report],
            rows,
        });
    }
    let size = sample_size.unwrap_or(t);
    if size == 0 || size > t {
        return Err(Error::input(format!(
            "sample size must be in 1..={t}, got {size}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut idx = sample(&mut rng, t, size).into_vec();
        idx.sort_unstable();
        let sub_targets = targets.select(&idx)?;
        let sub_perf = target_perf.select_prompts(&idx)?;
        let sub_manifest = manifest.select(&idx)?;
        reports.push(evaluate(predictor, &sub_targets, &sub_perf, &sub_manifest)?);
    }

    let mut rows = Vec::new();
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        let values: Option<Vec<f64>> = reports.iter().map(|r| r.headline()[k]).collect();
        let (value, stddev) = match values {
            Some(v) => {
                let (m, s) = mean_std(&v);
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        rows.push(ReportRow {
            metric: name.to_string(),
            value,
            stddev,
            benchmark_id: None,
        });
    }

    let mut bench_order: Vec<String> = Vec::new();
    let mut bench_values: HashMap<String, Vec<f64>> = HashMap::new();
    for b in manifest.groups() {
        bench_order.push(b.id.clone());
        bench_values.insert(b.id, Vec::new());
    }
    for r in &reports {
        for b in &r.per_benchmark {
            if let Some(c) = b.correlation {
                bench_values.get_mut(&b.benchmark_id).expect("known id").push(c);
            }
        }
    }
    for id in bench_order {
        let v = &bench_values[&id];
        let (value, stddev) = if v.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(v);
            (Some(m), Some(s))
        };
        rows.push(ReportRow {
            metric: "benchmark_score_correlation".to_string(),
            value,
            stddev,
            benchmark_id: Some(id),
        });
    }

    Ok(TrialReport {
        trials: reports,
        rows,
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
