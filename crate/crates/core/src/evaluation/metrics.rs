//! Success-prediction and model-selection metrics.

use crate::embeddings::PerformanceMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Scores paired with ±1 ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<i8>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<i8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::dims("labeled scores", scores.len(), labels.len()));
        }
        if let Some(i) = labels.iter().position(|&l| l != 1 && l != -1) {
            return Err(Error::input(format!("label {} at {i} is not +1 or -1", labels[i])));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::input(format!("score at {i} is not finite")));
        }
        Ok(LabeledScores { scores, labels })
    }

    /// Pools an M×T score matrix with the matching outcomes, row by row.
    pub fn pooled(scores: &Matrix, outcomes: &PerformanceMatrix) -> Result<Self> {
        if scores.shape() != (outcomes.n_models(), outcomes.n_prompts()) {
            return Err(Error::dims(
                "score/outcome pooling",
                format!("{}x{}", outcomes.n_models(), outcomes.n_prompts()),
                format!("{}x{}", scores.rows(), scores.cols()),
            ));
        }
        LabeledScores::new(scores.as_slice().to_vec(), outcomes.outcomes().to_vec())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_counts(&self, metric: &'static str) -> Result<(u64, u64)> {
        let pos = self.labels.iter().filter(|&&l| l == 1).count() as u64;
        let neg = self.labels.len() as u64 - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::undefined(
                metric,
                format!("needs both classes, got {pos} positive and {neg} negative labels"),
            ));
        }
        Ok((pos, neg))
    }
}

/// Area under the ROC curve via the Mann–Whitney statistic with average
/// ranks for tied scores (a tied positive/negative pair counts one half).
pub fn roc_auc(data: &LabeledScores) -> Result<f64> {
    let (pos, neg) = data.class_counts("auc")?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.scores[a].total_cmp(&data.scores[b]));

    // Twice the positive rank sum stays an integer under average ranks.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let score = data.scores[order[start]];
        let mut end = start;
        while end < order.len() && data.scores[order[end]] == score {
            end += 1;
        }
        // 1-based ranks start+1..=end, average (start + 1 + end) / 2
        let twice_avg = (start + 1 + end) as u128;
        let pos_in_group = order[start..end]
            .iter()
            .filter(|&&i| data.labels[i] == 1)
            .count() as u128;
        twice_rank_sum += twice_avg * pos_in_group;
        start = end;
    }
    let pos = pos as u128;
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / (2 * pos * neg as u128) as f64)
}

/// ROC points `(false positive rate, true positive rate)`, one per distinct
/// score threshold, from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(data: &LabeledScores) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = data.class_counts("roc_curve")?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.scores[b].total_cmp(&data.scores[a]));

    let mut points = Vec::with_capacity(order.len() + 1);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut start = 0;
    while start < order.len() {
        let score = data.scores[order[start]];
        while start < order.len() && data.scores[order[start]] == score {
            if data.labels[order[start]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            start += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a piecewise-linear curve.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Fraction of entries where `score > 0` agrees with a +1 label (and
/// `score <= 0` with −1).
pub fn binary_accuracy(data: &LabeledScores) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::input("accuracy of an empty score set"));
    }
    let correct = data
        .scores
        .iter()
        .zip(&data.labels)
        .filter(|(&s, &l)| (s > 0.0) == (l == 1))
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Pearson product-moment correlation (two-pass).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dims("pearson inputs", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::undefined(
            "pearson",
            format!("needs at least two points, got {}", x.len()),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::undefined("pearson", "zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Argmax with ties going to the lowest index.
pub fn select_model(scores_per_model: &[f64]) -> Result<usize> {
    let (first, rest) = scores_per_model
        .split_first()
        .ok_or_else(|| Error::input("cannot select from zero models"))?;
    let mut best = 0;
    let mut best_score = *first;
    for (i, &s) in rest.iter().enumerate() {
        if s > best_score {
            best = i + 1;
            best_score = s;
        }
    }
    Ok(best)
}

/// Per-target selection from an M×T score matrix.
pub fn select_models(scores: &Matrix) -> Result<Vec<usize>> {
    let mut column = vec![0.0; scores.rows()];
    (0..scores.cols())
        .map(|j| {
            for (i, c) in column.iter_mut().enumerate() {
                *c = scores.get(i, j);
            }
            select_model(&column)
        })
        .collect()
}

fn check_selections(selections: &[usize], target_perf: &PerformanceMatrix) -> Result<()> {
    if selections.len() != target_perf.n_prompts() {
        return Err(Error::dims(
            "selections",
            target_perf.n_prompts(),
            selections.len(),
        ));
    }
    if let Some(&bad) = selections.iter().find(|&&s| s >= target_perf.n_models()) {
        return Err(Error::input(format!(
            "selected model {bad} out of range for {} models",
            target_perf.n_models()
        )));
    }
    Ok(())
}

/// Fraction of targets on which the selected model succeeds.
pub fn selection_accuracy(selections: &[usize], target_perf: &PerformanceMatrix) -> Result<f64> {
    check_selections(selections, target_perf)?;
    if selections.is_empty() {
        return Err(Error::input("selection accuracy over zero targets"));
    }
    let hits = selections
        .iter()
        .enumerate()
        .filter(|&(j, &m)| target_perf.get(m, j) == 1)
        .count();
    Ok(hits as f64 / selections.len() as f64)
}

/// Selection accuracy restricted to targets that at least one model solves.
pub fn selection_recall(selections: &[usize], target_perf: &PerformanceMatrix) -> Result<f64> {
    check_selections(selections, target_perf)?;
    let (mut solvable, mut hits) = (0usize, 0usize);
    for (j, &m) in selections.iter().enumerate() {
        if (0..target_perf.n_models()).any(|i| target_perf.get(i, j) == 1) {
            solvable += 1;
            if target_perf.get(m, j) == 1 {
                hits += 1;
            }
        }
    }
    if solvable == 0 {
        return Err(Error::undefined("selection_recall", "no target is solvable by any model"));
    }
    Ok(hits as f64 / solvable as f64)
}
