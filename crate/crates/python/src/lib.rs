//! Python bindings. Matrices cross the boundary as lists of row lists;
//! outcomes as lists of +1/-1 ints.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use linrep::evaluation::{self, LabeledScores, SyntheticSpec};
use linrep::io_store::{self, Dtype};
use linrep::{Error, Matrix, PerformanceMatrix, PromptMatrix, RegularizationConfig};

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyArithmeticError::new_err(e.to_string()),
        _ if matches!(e, Error::Io { .. }) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py)
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

fn prompts(rows: Vec<Vec<f64>>) -> PyResult<PromptMatrix> {
    PromptMatrix::with_index_ids(matrix(rows)?).map_err(to_py)
}

fn performance(
    outcomes: Vec<Vec<i8>>,
    model_ids: Option<Vec<String>>,
    n_prompts: usize,
) -> PyResult<PerformanceMatrix> {
    let ids = model_ids.unwrap_or_else(|| (0..outcomes.len()).map(|i| format!("model_{i}")).collect());
    let prompt_ids = (0..n_prompts).map(|j| j.to_string()).collect();
    PerformanceMatrix::from_rows(&outcomes, ids, prompt_ids).map_err(to_py)
}

/// A fitted model pool: embeddings plus the pseudoinverse needed for
/// incremental updates.
#[pyclass(name = "FitState", module = "linrep", frozen)]
struct PyFitState {
    inner: linrep::FitState,
}

#[pymethods]
impl PyFitState {
    #[getter]
    fn embeddings(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.embeddings().vectors())
    }

    #[getter]
    fn model_ids(&self) -> Vec<String> {
        self.inner.embeddings().model_ids().to_vec()
    }

    #[getter]
    fn n_prompts(&self) -> usize {
        self.inner.prompts().len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.prompts().dim()
    }

    /// M×T scores of every model on each target prompt.
    fn predict(&self, targets: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let t = prompts(targets)?;
        Ok(rows_of(&self.inner.embeddings().predict_matrix(&t).map_err(to_py)?))
    }

    fn add_model(&self, outcomes: Vec<i8>, model_id: &str) -> PyResult<PyFitState> {
        let inner = self.inner.add_model(&outcomes, model_id).map_err(to_py)?;
        Ok(PyFitState { inner })
    }

    /// Returns `(state, iterations, final_residual)`.
    #[pyo3(signature = (new_prompts, new_outcomes, ns_max_iters=50, ns_tol=1e-10))]
    fn add_prompts(
        &self,
        new_prompts: Vec<Vec<f64>>,
        new_outcomes: Vec<Vec<i8>>,
        ns_max_iters: usize,
        ns_tol: f64,
    ) -> PyResult<(PyFitState, usize, f64)> {
        let start = self.inner.prompts().len();
        let raw = matrix(new_prompts)?;
        let ids: Vec<String> = (start..start + raw.rows()).map(|j| j.to_string()).collect();
        let p = PromptMatrix::new(raw, ids.clone()).map_err(to_py)?;
        let perf = PerformanceMatrix::from_rows(
            &new_outcomes,
            self.inner.performance().model_ids().to_vec(),
            ids,
        )
        .map_err(to_py)?;
        let update = self
            .inner
            .add_prompts(&p, &perf, ns_max_iters, ns_tol)
            .map_err(to_py)?;
        let (iters, residual) = update
            .newton_schulz
            .as_ref()
            .map_or((0, 0.0), |ns| (ns.iterations, ns.final_residual));
        Ok((PyFitState { inner: update.state }, iters, residual))
    }

    fn save(&self, state_dir: &str) -> PyResult<()> {
        io_store::save_state(state_dir, &self.inner).map_err(to_py)
    }

    #[staticmethod]
    fn load(state_dir: &str) -> PyResult<PyFitState> {
        let inner = io_store::load_state(state_dir).map_err(to_py)?;
        Ok(PyFitState { inner })
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "FitState(models={}, prompts={}, dim={}, epsilon={}, lambda={})",
            self.inner.embeddings().n_models(),
            self.inner.prompts().len(),
            self.inner.prompts().dim(),
            c.epsilon,
            c.lambda
        )
    }
}

/// Fits one embedding per row of `outcomes` (models × prompts, ±1).
#[pyfunction]
#[pyo3(signature = (prompts, outcomes, epsilon=0.0, lambda_=1.0, model_ids=None))]
fn fit(
    prompts: Vec<Vec<f64>>,
    outcomes: Vec<Vec<i8>>,
    epsilon: f64,
    lambda_: f64,
    model_ids: Option<Vec<String>>,
) -> PyResult<PyFitState> {
    let p = self::prompts(prompts)?;
    let perf = performance(outcomes, model_ids, p.len())?;
    let config = RegularizationConfig::new(epsilon, lambda_).map_err(to_py)?;
    let inner = linrep::fit(&p, &perf, &config).map_err(to_py)?;
    Ok(PyFitState { inner })
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<i8>) -> PyResult<f64> {
    let data = LabeledScores::new(scores, labels).map_err(to_py)?;
    evaluation::roc_auc(&data).map_err(to_py)
}

#[pyfunction]
fn roc_curve(scores: Vec<f64>, labels: Vec<i8>) -> PyResult<Vec<(f64, f64)>> {
    let data = LabeledScores::new(scores, labels).map_err(to_py)?;
    evaluation::roc_curve(&data).map_err(to_py)
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    evaluation::pearson(&x, &y).map_err(to_py)
}

/// Index of the best model per column of an M×T score matrix.
#[pyfunction]
fn select_models(scores: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    evaluation::select_models(&matrix(scores)?).map_err(to_py)
}

/// Planted-model data as a dict of plain lists.
#[pyfunction]
#[pyo3(signature = (n_models, n_source, n_target, dim, label_noise=0.0, seed=0, n_benchmarks=4))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic<'py>(
    py: Python<'py>,
    n_models: usize,
    n_source: usize,
    n_target: usize,
    dim: usize,
    label_noise: f64,
    seed: u64,
    n_benchmarks: usize,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let spec = SyntheticSpec::new(n_models, n_source, n_target, dim)
        .with_noise(label_noise)
        .with_seed(seed)
        .with_benchmarks(n_benchmarks);
    let data = evaluation::generate_synthetic(&spec).map_err(to_py)?;
    let perf_rows = |p: &PerformanceMatrix| -> Vec<Vec<i8>> {
        (0..p.n_models()).map(|i| p.row(i).to_vec()).collect()
    };
    let out = pyo3::types::PyDict::new(py);
    out.set_item("source_prompts", rows_of(data.source_prompts.embeddings()))?;
    out.set_item("source_outcomes", perf_rows(&data.source_perf))?;
    out.set_item("target_prompts", rows_of(data.target_prompts.embeddings()))?;
    out.set_item("target_outcomes", perf_rows(&data.target_perf))?;
    out.set_item("planted", rows_of(data.planted.vectors()))?;
    out.set_item("model_ids", data.planted.model_ids().to_vec())?;
    out.set_item("benchmark_ids", data.manifest.benchmark_ids().to_vec())?;
    Ok(out)
}

#[pyfunction]
fn read_matrix(path: &str) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows_of(&io_store::read_matrix(path).map_err(to_py)?))
}

/// `dtype` is "f64" (default) or "f32".
#[pyfunction]
#[pyo3(signature = (path, rows, dtype="f64"))]
fn write_matrix(path: &str, rows: Vec<Vec<f64>>, dtype: &str) -> PyResult<()> {
    let dtype = match dtype {
        "f64" => Dtype::F64,
        "f32" => Dtype::F32,
        other => return Err(PyValueError::new_err(format!("unknown dtype {other:?}"))),
    };
    io_store::write_matrix(path, &matrix(rows)?, dtype).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "linrep")]
pub fn linrep_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFitState>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(select_models, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(read_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(write_matrix, m)?)?;
    Ok(())
}
