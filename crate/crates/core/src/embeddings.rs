//! Model embeddings as success-hyperplane normals in prompt space.
//!
//! A model's embedding `e` is fitted so that `e · q ≈ ±1` over the source
//! prompts `q` it succeeds (+1) or fails (−1) on. Prediction, benchmark
//! aggregation and both incremental updates are linear maps on top of the
//! pseudoinverse held in [`FitState`].

use std::collections::HashSet;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{
    build_pseudoinverse, dot, l2_norm, newton_schulz_inverse, pseudoinverse_from_svd, FitRoute,
    Matrix, NewtonSchulzOutcome, PseudoinverseState, RegularizationConfig, SvdFactors,
};

/// Allowed deviation of a prompt embedding's L2 norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::input(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(())
}

pub(crate) fn index_ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// N×d matrix of unit-norm prompt embeddings with one id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptMatrix {
    embeddings: Matrix,
    prompt_ids: Vec<String>,
}

impl PromptMatrix {
    pub fn new(embeddings: Matrix, prompt_ids: Vec<String>) -> Result<Self> {
        if prompt_ids.len() != embeddings.rows() {
            return Err(Error::dims("prompt ids", embeddings.rows(), prompt_ids.len()));
        }
        if embeddings.cols() == 0 {
            return Err(Error::input("prompt embeddings must have at least one column"));
        }
        for (j, row) in embeddings.row_iter().enumerate() {
            let norm = l2_norm(row);
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::input(format!(
                    "prompt `{}` (row {j}) has L2 norm {norm}, expected 1 within {UNIT_NORM_TOLERANCE}",
                    prompt_ids[j]
                )));
            }
        }
        check_unique(&prompt_ids, "prompt")?;
        Ok(PromptMatrix {
            embeddings,
            prompt_ids,
        })
    }

    /// Uses the row index (`"0"`, `"1"`, ...) as the prompt id.
    pub fn with_index_ids(embeddings: Matrix) -> Result<Self> {
        let ids = index_ids("", embeddings.rows());
        PromptMatrix::new(embeddings, ids)
    }

    /// Scales every row of `raw` to unit length. Zero rows are rejected.
    pub fn normalized(raw: &Matrix, prompt_ids: Vec<String>) -> Result<Self> {
        let mut data = Vec::with_capacity(raw.rows() * raw.cols());
        for (j, row) in raw.row_iter().enumerate() {
            let norm = l2_norm(row);
            if norm == 0.0 {
                return Err(Error::input(format!("row {j} is zero and cannot be normalized")));
            }
            data.extend(row.iter().map(|v| v / norm));
        }
        PromptMatrix::new(Matrix::new(raw.rows(), raw.cols(), data)?, prompt_ids)
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn prompt_ids(&self) -> &[String] {
        &self.prompt_ids
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        self.embeddings.row(j)
    }

    pub fn select(&self, indices: &[usize]) -> Result<PromptMatrix> {
        let embeddings = self.embeddings.select_rows(indices)?;
        let prompt_ids = indices.iter().map(|&i| self.prompt_ids[i].clone()).collect();
        PromptMatrix::new(embeddings, prompt_ids)
    }

    pub fn concat(&self, other: &PromptMatrix) -> Result<PromptMatrix> {
        let embeddings = self.embeddings.vstack(&other.embeddings)?;
        let mut prompt_ids = self.prompt_ids.clone();
        prompt_ids.extend_from_slice(&other.prompt_ids);
        check_unique(&prompt_ids, "prompt")?;
        Ok(PromptMatrix {
            embeddings,
            prompt_ids,
        })
    }
}

/// M×N matrix of ±1 outcomes (model i on prompt j).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerformanceMatrix {
    n_models: usize,
    n_prompts: usize,
    outcomes: Vec<i8>,
    model_ids: Vec<String>,
    prompt_ids: Vec<String>,
}

impl PerformanceMatrix {
    pub fn new(
        outcomes: Vec<i8>,
        model_ids: Vec<String>,
        prompt_ids: Vec<String>,
    ) -> Result<Self> {
        let (m, n) = (model_ids.len(), prompt_ids.len());
        if outcomes.len() != m * n {
            return Err(Error::dims(
                "performance matrix",
                format!("{m}x{n} = {} outcomes", m * n),
                outcomes.len(),
            ));
        }
        if let Some(pos) = outcomes.iter().position(|&v| v != 1 && v != -1) {
            return Err(Error::input(format!(
                "outcome {} for model `{}` on prompt `{}` is not +1 or -1",
                outcomes[pos],
                model_ids[pos / n],
                prompt_ids[pos % n]
            )));
        }
        check_unique(&model_ids, "model")?;
        Ok(PerformanceMatrix {
            n_models: m,
            n_prompts: n,
            outcomes,
            model_ids,
            prompt_ids,
        })
    }

    /// Builds from rows of outcomes (one row per model).
    pub fn from_rows(
        rows: &[Vec<i8>],
        model_ids: Vec<String>,
        prompt_ids: Vec<String>,
    ) -> Result<Self> {
        if let Some((i, r)) = rows
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != prompt_ids.len())
        {
            return Err(Error::dims(
                "performance row",
                prompt_ids.len(),
                format!("{} (model {i})", r.len()),
            ));
        }
        PerformanceMatrix::new(rows.concat(), model_ids, prompt_ids)
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    pub fn outcomes(&self) -> &[i8] {
        &self.outcomes
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn prompt_ids(&self) -> &[String] {
        &self.prompt_ids
    }

    #[inline]
    pub fn get(&self, model: usize, prompt: usize) -> i8 {
        self.outcomes[model * self.n_prompts + prompt]
    }

    pub fn row(&self, model: usize) -> &[i8] {
        &self.outcomes[model * self.n_prompts..(model + 1) * self.n_prompts]
    }

    pub fn success_count(&self, model: usize) -> usize {
        self.row(model).iter().filter(|&&v| v == 1).count()
    }

    /// Outcomes as a real matrix of ±1.0.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.outcomes.iter().map(|&v| f64::from(v)).collect();
        Matrix::new(self.n_models, self.n_prompts, data).expect("±1 entries are finite")
    }

    pub fn select_prompts(&self, indices: &[usize]) -> Result<PerformanceMatrix> {
        if let Some(&bad) = indices.iter().find(|&&j| j >= self.n_prompts) {
            return Err(Error::input(format!(
                "prompt index {bad} out of range for {} prompts",
                self.n_prompts
            )));
        }
        let mut outcomes = Vec::with_capacity(self.n_models * indices.len());
        for i in 0..self.n_models {
            let row = self.row(i);
            outcomes.extend(indices.iter().map(|&j| row[j]));
        }
        Ok(PerformanceMatrix {
            n_models: self.n_models,
            n_prompts: indices.len(),
            outcomes,
            model_ids: self.model_ids.clone(),
            prompt_ids: indices.iter().map(|&j| self.prompt_ids[j].clone()).collect(),
        })
    }

    pub(crate) fn check_prompts_align(&self, prompts: &PromptMatrix) -> Result<()> {
        if self.prompt_ids.len() != prompts.len() {
            return Err(Error::dims(
                "performance/prompt alignment",
                format!("{} prompts", prompts.len()),
                format!("{} prompt columns", self.prompt_ids.len()),
            ));
        }
        if let Some(j) = (0..prompts.len()).find(|&j| self.prompt_ids[j] != prompts.prompt_ids[j])
        {
            return Err(Error::input(format!(
                "prompt id mismatch at column {j}: performance has `{}`, prompts have `{}`",
                self.prompt_ids[j], prompts.prompt_ids[j]
            )));
        }
        Ok(())
    }
}

/// What an embedding matrix was fitted from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub config: RegularizationConfig,
    pub n_prompts: usize,
    pub dim: usize,
    pub n_models: usize,
    pub route: FitRoute,
}

/// M×d matrix of model embeddings, one row per model id.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEmbeddings {
    vectors: Matrix,
    model_ids: Vec<String>,
    provenance: Option<Provenance>,
}

impl ModelEmbeddings {
    pub fn new(
        vectors: Matrix,
        model_ids: Vec<String>,
        provenance: Option<Provenance>,
    ) -> Result<Self> {
        if vectors.rows() != model_ids.len() {
            return Err(Error::dims("model ids", vectors.rows(), model_ids.len()));
        }
        if vectors.rows() == 0 || vectors.cols() == 0 {
            return Err(Error::input("model embeddings must be non-empty"));
        }
        check_unique(&model_ids, "model")?;
        Ok(ModelEmbeddings {
            vectors,
            model_ids,
            provenance,
        })
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn n_models(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn index_of(&self, model_id: &str) -> Option<usize> {
        self.model_ids.iter().position(|m| m == model_id)
    }

    fn check_model(&self, model_index: usize) -> Result<()> {
        if model_index >= self.n_models() {
            return Err(Error::input(format!(
                "model index {model_index} out of range for {} models",
                self.n_models()
            )));
        }
        Ok(())
    }

    /// Predicted success score of one model on one unit-norm query;
    /// positive means predicted success.
    pub fn predict_success(&self, model_index: usize, query: &[f64]) -> Result<f64> {
        self.check_model(model_index)?;
        if query.len() != self.dim() {
            return Err(Error::dims("query", self.dim(), query.len()));
        }
        let norm = l2_norm(query);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::input(format!(
                "query has L2 norm {norm}, expected 1 within {UNIT_NORM_TOLERANCE}"
            )));
        }
        Ok(dot(self.row(model_index), query))
    }

    /// M×T matrix of scores, entry `(i, j)` for model i on target j.
    pub fn predict_matrix(&self, targets: &PromptMatrix) -> Result<Matrix> {
        if targets.dim() != self.dim() {
            return Err(Error::dims("target prompts", self.dim(), targets.dim()));
        }
        let t = targets.len();
        let mut data = vec![0.0; self.n_models() * t];
        if t > 0 {
            data.par_chunks_mut(t).enumerate().for_each(|(i, out)| {
                let e = self.row(i);
                for (j, o) in out.iter_mut().enumerate() {
                    *o = dot(e, targets.row(j));
                }
            });
        }
        Matrix::new(self.n_models(), t, data)
    }

    /// Score of a model on a benchmark vector (see [`benchmark_vector`]).
    pub fn benchmark_score(&self, model_index: usize, bench_vec: &[f64]) -> Result<f64> {
        self.check_model(model_index)?;
        if bench_vec.len() != self.dim() {
            return Err(Error::dims("benchmark vector", self.dim(), bench_vec.len()));
        }
        Ok(dot(self.row(model_index), bench_vec))
    }
}

/// Mean of the selected prompt rows. The result is deliberately left
/// unnormalized so that its score equals the mean of per-prompt scores.
pub fn benchmark_vector(targets: &PromptMatrix, member_indices: &[usize]) -> Result<Vec<f64>> {
    if member_indices.is_empty() {
        return Err(Error::input("benchmark has no member prompts"));
    }
    let mut acc = vec![0.0; targets.dim()];
    for &j in member_indices {
        if j >= targets.len() {
            return Err(Error::input(format!(
                "benchmark member {j} out of range for {} prompts",
                targets.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(targets.row(j)) {
            *a += v;
        }
    }
    let n = member_indices.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Everything needed to predict and to update incrementally without a refit.
///
/// Invariant: `embeddings = performance × pinv.pinv_t()`.
#[derive(Debug, Clone)]
pub struct FitState {
    pinv: Arc<PseudoinverseState>,
    prompts: Arc<PromptMatrix>,
    performance: PerformanceMatrix,
    embeddings: ModelEmbeddings,
}

/// Fits one embedding per model from source prompts and outcomes.
pub fn fit(
    prompts: &PromptMatrix,
    performance: &PerformanceMatrix,
    config: &RegularizationConfig,
) -> Result<FitState> {
    if prompts.is_empty() {
        return Err(Error::input("cannot fit on zero source prompts"));
    }
    if performance.n_models() == 0 {
        return Err(Error::input("cannot fit with zero models"));
    }
    performance.check_prompts_align(prompts)?;
    let pinv = build_pseudoinverse(prompts.embeddings(), config)?;
    FitState::assemble(Arc::new(pinv), Arc::new(prompts.clone()), performance.clone())
}

/// [`fit`] with a precomputed SVD of the prompt matrix.
pub fn fit_with_svd(
    prompts: &PromptMatrix,
    performance: &PerformanceMatrix,
    svd: SvdFactors,
    config: &RegularizationConfig,
) -> Result<FitState> {
    if prompts.is_empty() {
        return Err(Error::input("cannot fit on zero source prompts"));
    }
    performance.check_prompts_align(prompts)?;
    config.validate()?;
    let pinv = pseudoinverse_from_svd(svd, prompts.len(), prompts.dim(), config)?;
    FitState::assemble(Arc::new(pinv), Arc::new(prompts.clone()), performance.clone())
}

/// Result of [`FitState::add_prompts`].
#[derive(Debug, Clone)]
pub struct PromptUpdate {
    pub state: FitState,
    /// `None` when no prompts were added.
    pub newton_schulz: Option<NewtonSchulzOutcome>,
}

impl FitState {
    fn assemble(
        pinv: Arc<PseudoinverseState>,
        prompts: Arc<PromptMatrix>,
        performance: PerformanceMatrix,
    ) -> Result<FitState> {
        let vectors = performance.to_matrix().matmul(pinv.pinv_t())?;
        let provenance = Provenance {
            config: *pinv.config(),
            n_prompts: prompts.len(),
            dim: prompts.dim(),
            n_models: performance.n_models(),
            route: pinv.route(),
        };
        let embeddings =
            ModelEmbeddings::new(vectors, performance.model_ids().to_vec(), Some(provenance))?;
        Ok(FitState {
            pinv,
            prompts,
            performance,
            embeddings,
        })
    }

    /// Reassembles a persisted state, recomputing the embeddings from the
    /// stored pseudoinverse.
    pub fn from_parts(
        pinv: PseudoinverseState,
        prompts: PromptMatrix,
        performance: PerformanceMatrix,
    ) -> Result<FitState> {
        performance.check_prompts_align(&prompts)?;
        if pinv.source_dims() != (prompts.len(), prompts.dim()) {
            return Err(Error::dims(
                "stored pseudoinverse",
                format!("{}x{}", prompts.len(), prompts.dim()),
                format!("{}x{}", pinv.source_dims().0, pinv.source_dims().1),
            ));
        }
        FitState::assemble(Arc::new(pinv), Arc::new(prompts), performance)
    }

    pub fn pinv(&self) -> &PseudoinverseState {
        &self.pinv
    }

    pub fn prompts(&self) -> &PromptMatrix {
        &self.prompts
    }

    pub fn performance(&self) -> &PerformanceMatrix {
        &self.performance
    }

    pub fn embeddings(&self) -> &ModelEmbeddings {
        &self.embeddings
    }

    pub fn config(&self) -> &RegularizationConfig {
        self.pinv.config()
    }

    /// Embeds a new model from its outcomes on the source prompts, reusing
    /// the stored pseudoinverse (one vector-matrix product, O(N·d)).
    pub fn add_model(&self, new_outcomes: &[i8], new_model_id: &str) -> Result<FitState> {
        let n = self.prompts.len();
        if new_outcomes.len() != n {
            return Err(Error::dims("new model outcomes", n, new_outcomes.len()));
        }
        let batch = PerformanceMatrix::new(
            new_outcomes.to_vec(),
            vec![new_model_id.to_string()],
            self.performance.prompt_ids().to_vec(),
        )?;
        self.add_models(&batch)
    }

    /// Batch form of [`FitState::add_model`]: one product
    /// `P_new · pinv_t`, rows appended in order.
    pub fn add_models(&self, batch: &PerformanceMatrix) -> Result<FitState> {
        if batch.prompt_ids() != self.performance.prompt_ids() {
            return Err(Error::input(
                "new model outcomes must cover the source prompts in stored order",
            ));
        }
        for id in batch.model_ids() {
            if self.embeddings.index_of(id).is_some() {
                return Err(Error::input(format!("model id `{id}` already present")));
            }
        }
        let mut outcomes = self.performance.outcomes().to_vec();
        outcomes.extend_from_slice(batch.outcomes());
        let mut model_ids = self.performance.model_ids().to_vec();
        model_ids.extend_from_slice(batch.model_ids());
        let performance =
            PerformanceMatrix::new(outcomes, model_ids, self.performance.prompt_ids().to_vec())?;

        let rows = batch.to_matrix().matmul(self.pinv.pinv_t())?;
        let vectors = self.embeddings.vectors().vstack(&rows)?;
        let mut provenance = *self.embeddings.provenance().expect("fitted state has provenance");
        provenance.n_models = performance.n_models();
        let embeddings =
            ModelEmbeddings::new(vectors, performance.model_ids().to_vec(), Some(provenance))?;

        Ok(FitState {
            pinv: Arc::clone(&self.pinv),
            prompts: Arc::clone(&self.prompts),
            performance,
            embeddings,
        })
    }

    /// Appends source prompts and refreshes every embedding through the
    /// regularized normal equations, refining the stored `(DᵀD + 2λI)⁻¹`
    /// with Newton–Schulz instead of recomputing an SVD.
    ///
    /// The result matches a full refit with `epsilon = 0`: singular-value
    /// thresholding has no counterpart on this route.
    pub fn add_prompts(
        &self,
        new_prompts: &PromptMatrix,
        new_outcomes: &PerformanceMatrix,
        ns_max_iters: usize,
        ns_tol: f64,
    ) -> Result<PromptUpdate> {
        let lambda = self.config().lambda;
        if !(lambda > 0.0) {
            return Err(Error::Config(
                "adding prompts incrementally requires lambda > 0".to_string(),
            ));
        }
        if new_outcomes.model_ids() != self.performance.model_ids() {
            return Err(Error::input(
                "new outcomes must list the same models, in the same order, as the fitted state",
            ));
        }
        new_outcomes.check_prompts_align(new_prompts)?;
        if new_prompts.is_empty() {
            return Ok(PromptUpdate {
                state: self.clone(),
                newton_schulz: None,
            });
        }
        if new_prompts.dim() != self.prompts.dim() {
            return Err(Error::dims("new prompts", self.prompts.dim(), new_prompts.dim()));
        }

        let prompts = self.prompts.concat(new_prompts)?;
        let mut prompt_ids = self.performance.prompt_ids().to_vec();
        prompt_ids.extend_from_slice(new_outcomes.prompt_ids());
        let outcomes: Vec<i8> = (0..self.performance.n_models())
            .flat_map(|i| {
                self.performance
                    .row(i)
                    .iter()
                    .chain(new_outcomes.row(i))
                    .copied()
            })
            .collect();
        let performance =
            PerformanceMatrix::new(outcomes, self.performance.model_ids().to_vec(), prompt_ids)?;

        let d_new = prompts.embeddings();
        let a_new = d_new.gram().add_diagonal(2.0 * lambda);
        let ns = newton_schulz_inverse(&a_new, self.pinv.normal_inverse(), ns_max_iters, ns_tol)?;
        if ns.final_residual > ns_tol {
            return Err(Error::NotConverged {
                iterations: ns.iterations,
                residual: ns.final_residual,
                tol: ns_tol,
            });
        }
        // (D⁺)ᵀ = (A⁻¹ Dᵀ)ᵀ = D A⁻ᵀ
        let pinv_t = d_new.matmul(&ns.inverse.transpose())?;
        let pinv = PseudoinverseState::from_parts(
            *self.config(),
            pinv_t,
            ns.inverse.clone(),
            FitRoute::NewtonSchulz,
        )?;
        let state = FitState::assemble(Arc::new(pinv), Arc::new(prompts), performance)?;
        Ok(PromptUpdate {
            state,
            newton_schulz: Some(ns),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        index_ids(prefix, n)
    }

    fn identity_fit(lambda: f64) -> FitState {
        let prompts = PromptMatrix::with_index_ids(Matrix::identity(2)).unwrap();
        let perf = PerformanceMatrix::new(vec![1, -1], ids("m", 1), ids("", 2)).unwrap();
        fit(&prompts, &perf, &RegularizationConfig::new(0.0, lambda).unwrap()).unwrap()
    }

    #[test]
    fn fit_identity_without_regularization() {
        let st = identity_fit(0.0);
        assert_eq!(st.embeddings().row(0), &[1.0, -1.0]);
        assert_eq!(st.embeddings().predict_success(0, &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn fit_identity_with_tikhonov() {
        let st = identity_fit(0.5);
        assert_eq!(st.embeddings().row(0), &[0.5, -0.5]);
    }

    #[test]
    fn predict_success_examples() {
        let e = ModelEmbeddings::new(Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), ids("m", 1), None)
            .unwrap();
        assert_eq!(e.predict_success(0, &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(e.predict_success(0, &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(e.predict_success(0, &[1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(e.predict_success(0, &[2.0, 0.0]), Err(Error::Input(_))));
        assert!(e.predict_success(1, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn predict_matrix_of_zero_embeddings() {
        let e = ModelEmbeddings::new(Matrix::zeros(3, 2), ids("m", 3), None).unwrap();
        let t = PromptMatrix::with_index_ids(Matrix::identity(2)).unwrap();
        let scores = e.predict_matrix(&t).unwrap();
        assert!(scores.as_slice().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn prompt_matrix_validation() {
        assert!(PromptMatrix::with_index_ids(Matrix::from_rows(&[[1.0, 1.0]]).unwrap()).is_err());
        let m = Matrix::identity(2);
        assert!(PromptMatrix::new(m.clone(), vec!["a".into(), "a".into()]).is_err());
        assert!(PromptMatrix::new(m, vec!["a".into()]).is_err());
        let n = PromptMatrix::normalized(&Matrix::from_rows(&[[3.0, 4.0]]).unwrap(), ids("", 1))
            .unwrap();
        assert_eq!(n.row(0), &[0.6, 0.8]);
        assert!(PromptMatrix::normalized(&Matrix::zeros(1, 2), ids("", 1)).is_err());
    }

    #[test]
    fn performance_matrix_validation() {
        assert!(PerformanceMatrix::new(vec![1, 0], ids("m", 1), ids("", 2)).is_err());
        assert!(PerformanceMatrix::new(vec![1, 1], ids("m", 1), ids("", 1)).is_err());
        assert!(PerformanceMatrix::new(vec![1, 1], vec!["a".into(), "a".into()], ids("", 1)).is_err());
    }

    #[test]
    fn fit_rejects_misaligned_ids() {
        let prompts = PromptMatrix::with_index_ids(Matrix::identity(2)).unwrap();
        let perf =
            PerformanceMatrix::new(vec![1, -1], ids("m", 1), vec!["0".into(), "x".into()]).unwrap();
        let err = fit(&prompts, &perf, &RegularizationConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
        let perf = PerformanceMatrix::new(vec![1], ids("m", 1), ids("", 1)).unwrap();
        assert!(fit(&prompts, &perf, &RegularizationConfig::default()).is_err());
    }

    #[test]
    fn benchmark_vector_examples() {
        let t = PromptMatrix::with_index_ids(
            Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(benchmark_vector(&t, &[0, 1]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(benchmark_vector(&t, &[2]).unwrap(), t.row(2));
        assert!(benchmark_vector(&t, &[]).is_err());
        assert!(benchmark_vector(&t, &[3]).is_err());

        let e = ModelEmbeddings::new(Matrix::from_rows(&[[0.3, -0.7]]).unwrap(), ids("m", 1), None)
            .unwrap();
        assert_eq!(e.benchmark_score(0, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(
            e.benchmark_score(0, &benchmark_vector(&t, &[2]).unwrap()).unwrap(),
            e.predict_success(0, t.row(2)).unwrap()
        );
    }

    #[test]
    fn add_model_on_identity() {
        let st = identity_fit(0.0);
        let st2 = st.add_model(&[1, 1], "all_pass").unwrap();
        assert_eq!(st2.embeddings().row(1), &[1.0, 1.0]);
        assert_eq!(st2.embeddings().row(0), st.embeddings().row(0));
        assert_eq!(st2.embeddings().model_ids(), &["m0", "all_pass"]);

        let dup = st.add_model(&[1, -1], "copy").unwrap();
        assert_eq!(dup.embeddings().row(1), dup.embeddings().row(0));
    }

    #[test]
    fn add_model_errors() {
        let st = identity_fit(0.0);
        assert!(st.add_model(&[1, 1], "m0").is_err());
        assert!(st.add_model(&[1], "new").is_err());
        assert!(st.add_model(&[1, 0], "new").is_err());
    }

    #[test]
    fn add_prompts_requires_lambda() {
        let st = identity_fit(0.0);
        let p = PromptMatrix::new(Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), vec!["n".into()])
            .unwrap();
        let o = PerformanceMatrix::new(vec![1], ids("m", 1), vec!["n".into()]).unwrap();
        assert!(matches!(st.add_prompts(&p, &o, 50, 1e-10), Err(Error::Config(_))));
    }

    #[test]
    fn add_zero_prompts_is_noop() {
        let st = identity_fit(1.0);
        let p = PromptMatrix::new(Matrix::zeros(0, 2), vec![]).unwrap();
        let o = PerformanceMatrix::new(vec![], ids("m", 1), vec![]).unwrap();
        let up = st.add_prompts(&p, &o, 50, 1e-10).unwrap();
        assert!(up.newton_schulz.is_none());
        assert_eq!(up.state.embeddings(), st.embeddings());
    }

    #[test]
    fn from_parts_recovers_embeddings() {
        let st = identity_fit(0.5);
        let pinv = PseudoinverseState::from_parts(
            *st.config(),
            st.pinv().pinv_t().clone(),
            st.pinv().normal_inverse().clone(),
            FitRoute::Svd,
        )
        .unwrap();
        let back =
            FitState::from_parts(pinv, st.prompts().clone(), st.performance().clone()).unwrap();
        assert_eq!(back.embeddings().vectors(), st.embeddings().vectors());
    }
}
