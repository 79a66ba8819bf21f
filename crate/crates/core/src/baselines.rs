//! Reference predictors: k-nearest-neighbour success rates and the static
//! best-source-performer selector.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::embeddings::{PerformanceMatrix, PromptMatrix, UNIT_NORM_TOLERANCE};
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig { k: 5 }
    }
}

/// Indices of the `k` source prompts most similar to `query`, by inner
/// product. Equal similarities go to the lower prompt index.
fn nearest(prompts: &PromptMatrix, query: &[f64], k: usize) -> Result<Vec<usize>> {
    let n = prompts.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("knn k must be in 1..={n}, got {k}")));
    }
    if query.len() != prompts.dim() {
        return Err(Error::dims("knn query", prompts.dim(), query.len()));
    }
    let norm = l2_norm(query);
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::input(format!(
            "knn query has L2 norm {norm}, expected 1 within {UNIT_NORM_TOLERANCE}"
        )));
    }
    let mut ranked: Vec<(f64, usize)> = (0..n).map(|j| (dot(prompts.row(j), query), j)).collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
    };
    if k < n {
        ranked.select_nth_unstable_by(k - 1, order);
        ranked.truncate(k);
    }
    Ok(ranked.into_iter().map(|(_, j)| j).collect())
}

fn success_rate(performance: &PerformanceMatrix, model: usize, neighbours: &[usize]) -> f64 {
    let row = performance.row(model);
    let hits = neighbours.iter().filter(|&&j| row[j] == 1).count();
    hits as f64 / neighbours.len() as f64
}

fn check_alignment(prompts: &PromptMatrix, performance: &PerformanceMatrix) -> Result<()> {
    if performance.n_prompts() != prompts.len() {
        return Err(Error::dims(
            "knn source outcomes",
            format!("{} prompt columns", prompts.len()),
            performance.n_prompts(),
        ));
    }
    Ok(())
}

/// Success rate in `[0, 1]` of a model over the `k` source prompts nearest to
/// the query.
pub fn knn_predict(
    prompts: &PromptMatrix,
    performance: &PerformanceMatrix,
    model_index: usize,
    query: &[f64],
    config: &KnnConfig,
) -> Result<f64> {
    check_alignment(prompts, performance)?;
    if model_index >= performance.n_models() {
        return Err(Error::input(format!(
            "model index {model_index} out of range for {} models",
            performance.n_models()
        )));
    }
    let neighbours = nearest(prompts, query, config.k)?;
    Ok(success_rate(performance, model_index, &neighbours))
}

/// M×T matrix of kNN success rates for every model on every target.
pub fn knn_predict_matrix(
    prompts: &PromptMatrix,
    performance: &PerformanceMatrix,
    targets: &PromptMatrix,
    config: &KnnConfig,
) -> Result<Matrix> {
    check_alignment(prompts, performance)?;
    let neighbourhoods: Vec<Vec<usize>> = (0..targets.len())
        .into_par_iter()
        .map(|t| nearest(prompts, targets.row(t), config.k))
        .collect::<Result<_>>()?;
    let m = performance.n_models();
    let t = targets.len();
    let mut data = Vec::with_capacity(m * t);
    for i in 0..m {
        data.extend(neighbourhoods.iter().map(|nb| success_rate(performance, i, nb)));
    }
    Matrix::new(m, t, data)
}

/// Index of the model with the most source successes; ties go to the lower
/// index.
pub fn best_source_performer(performance: &PerformanceMatrix) -> Result<usize> {
    let m = performance.n_models();
    if m == 0 {
        return Err(Error::input("best source performer needs at least one model"));
    }
    let mut best = 0;
    let mut best_count = performance.success_count(0);
    for i in 1..m {
        let c = performance.success_count(i);
        if c > best_count {
            best = i;
            best_count = c;
        }
    }
    Ok(best)
}
