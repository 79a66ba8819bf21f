//! Dense linear algebra: the row-major [`Matrix`], thin SVD, the regularized
//! pseudoinverse of a prompt matrix, and Newton–Schulz inverse refinement.
//!
//! Every reduction runs sequentially in index order so that identical inputs
//! give bit-identical outputs. Parallelism is only used across independent
//! output rows.

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major dense matrix of finite `f64` values.
///
/// A matrix may have zero rows (an empty batch of prompts, for instance);
/// callers that need a non-empty matrix check that themselves.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::input(format!("matrix size {rows}x{cols} overflows")))?;
        if data.len() != expected {
            return Err(Error::dims("matrix data", expected, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite entry {} at ({}, {})",
                data[pos],
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Builds a matrix from equally long rows. An empty slice is rejected
    /// because the column count would be unknown.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::input("cannot build a matrix from zero rows"))?;
        let cols = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dims("matrix row", cols, format!("{} (row {i})", r.len())));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`. Each output entry accumulates over the shared index in
    /// ascending order.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dims(
                "matrix product",
                format!("{} rows on the right", self.cols),
                other.rows,
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        if other.cols == 0 {
            return Ok(out);
        }
        out.data
            .par_chunks_mut(other.cols)
            .zip(self.data.par_chunks(self.cols.max(1)))
            .for_each(|(out_row, lhs_row)| row_times_into(lhs_row, other, out_row));
        Ok(out)
    }

    /// Row vector times matrix, `vᵀ · self`. Bit-identical to the matching
    /// row of [`Matrix::matmul`].
    pub fn left_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::dims("vector-matrix product", self.rows, v.len()));
        }
        let mut out = vec![0.0; self.cols];
        row_times_into(v, self, &mut out);
        Ok(out)
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        self.transpose()
            .matmul(self)
            .expect("shapes agree by construction")
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                "matrix difference",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add_scalar(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v + c).collect(),
        }
    }

    /// Adds `c` to every diagonal entry of a square matrix.
    pub fn add_diagonal(&self, c: f64) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out.data[i * self.cols + i] += c;
        }
        out
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::dims("row concatenation", self.cols, other.cols));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Places `other` to the right of `self`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dims("column concatenation", self.rows, other.rows));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::dims("appended row", self.cols, row.len()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("appended row has non-finite entries"));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Rows at the given indices, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::input(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Columns at the given indices, in order.
    pub fn select_cols(&self, indices: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = indices.iter().find(|&&j| j >= self.cols) {
            return Err(Error::input(format!(
                "column index {bad} out of range for {} columns",
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(indices.iter().map(|&j| row[j]));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: indices.len(),
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            data.extend(m.row(i).iter().copied());
        }
        Matrix { rows, cols, data }
    }
}

#[inline]
fn row_times_into(lhs_row: &[f64], rhs: &Matrix, out: &mut [f64]) {
    for (k, &a) in lhs_row.iter().enumerate() {
        let rhs_row = rhs.row(k);
        for (o, &b) in out.iter_mut().zip(rhs_row) {
            *o += a * b;
        }
    }
}

/// Sequential dot product in index order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Thin singular value decomposition `D = U · diag(singulars) · Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// N×r left singular vectors.
    pub u: Matrix,
    /// r values, non-increasing.
    pub singulars: Vec<f64>,
    /// d×r right singular vectors.
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank_capacity(&self) -> usize {
        self.singulars.len()
    }

    pub fn max_singular(&self) -> f64 {
        self.singulars.first().copied().unwrap_or(0.0)
    }

    /// `U · diag(weights) · Vᵀ`.
    pub fn weighted_product(&self, weights: &[f64]) -> Matrix {
        debug_assert_eq!(weights.len(), self.singulars.len());
        let mut scaled_u = self.u.clone();
        let r = weights.len();
        for row in scaled_u.data.chunks_exact_mut(r.max(1)) {
            for (x, w) in row.iter_mut().zip(weights) {
                *x *= w;
            }
        }
        scaled_u
            .matmul(&self.v.transpose())
            .expect("shapes agree by construction")
    }
}

/// Thin SVD with `r = min(N, d)`.
///
/// Signs are normalized so that the first nonzero entry of each column of `V`
/// is non-negative, with the matching column of `U` flipped alongside.
pub fn compute_svd(d: &Matrix) -> Result<SvdFactors> {
    let (rows, cols) = d.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::input(format!("cannot decompose an empty {rows}x{cols} matrix")));
    }
    let r = rows.min(cols);
    let max_iters = 1000 * r + 10_000;
    let svd = d
        .to_nalgebra()
        .try_svd(true, true, f64::EPSILON, max_iters)
        .ok_or(Error::SvdFailure { rows, cols })?;
    let u = svd.u.ok_or(Error::SvdFailure { rows, cols })?;
    let v_t = svd.v_t.ok_or(Error::SvdFailure { rows, cols })?;

    let mut u = Matrix::from_nalgebra(&u);
    let mut v = Matrix::from_nalgebra(&v_t.transpose());
    let singulars: Vec<f64> = svd.singular_values.iter().copied().collect();

    for k in 0..r {
        let first = (0..cols).map(|i| v.get(i, k)).find(|&x| x != 0.0);
        if matches!(first, Some(x) if x < 0.0) {
            for i in 0..cols {
                v.data[i * r + k] = -v.data[i * r + k];
            }
            for i in 0..rows {
                u.data[i * r + k] = -u.data[i * r + k];
            }
        }
    }

    Ok(SvdFactors { u, singulars, v })
}

/// Numerical tolerance `eps64 · max(n_rows, n_cols) · max(singulars)`.
pub fn machine_tolerance(n_rows: usize, n_cols: usize, singulars: &[f64]) -> f64 {
    let max_sigma = singulars.iter().copied().fold(0.0, f64::max);
    f64::EPSILON * n_rows.max(n_cols) as f64 * max_sigma
}

/// Singular-value threshold `epsilon` and Tikhonov strength `lambda`.
///
/// `epsilon = 0` disables thresholding beyond the numerical tolerance: only
/// singular values at or below the machine tolerance are dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationConfig {
    pub epsilon: f64,
    pub lambda: f64,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        RegularizationConfig {
            epsilon: 0.0,
            lambda: 1.0,
        }
    }
}

impl RegularizationConfig {
    pub fn new(epsilon: f64, lambda: f64) -> Result<Self> {
        let cfg = RegularizationConfig { epsilon, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Checks `epsilon` against the numerical tolerance of a decomposition.
    pub fn check_against_tolerance(&self, tolerance: f64) -> Result<()> {
        self.validate()?;
        if self.epsilon > 0.0 && self.epsilon <= tolerance {
            return Err(Error::Config(format!(
                "epsilon {:e} must exceed the numerical tolerance {:e} (use 0 to disable thresholding)",
                self.epsilon, tolerance
            )));
        }
        Ok(())
    }
}

/// Diagonal of the regularized inverse spectrum: `σ / (σ² + 2λ)` for kept
/// directions, zero for directions below the threshold.
pub fn regularized_sigma_prime(
    singulars: &[f64],
    config: &RegularizationConfig,
    tolerance: f64,
) -> Result<Vec<f64>> {
    config.check_against_tolerance(tolerance)?;
    if let Some(w) = singulars.windows(2).find(|w| w[1] > w[0]) {
        return Err(Error::input(format!(
            "singular values must be non-increasing, found {} before {}",
            w[0], w[1]
        )));
    }
    if let Some(s) = singulars.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::input(format!("singular value {s} is not a finite non-negative value")));
    }
    let two_lambda = 2.0 * config.lambda;
    Ok(singulars
        .iter()
        .map(|&s| {
            let dropped = if config.epsilon == 0.0 {
                s <= tolerance
            } else {
                s < config.epsilon
            };
            if dropped || s == 0.0 {
                0.0
            } else {
                s / (s * s + two_lambda)
            }
        })
        .collect())
}

/// Which computation produced a pseudoinverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitRoute {
    /// Thresholded, Tikhonov-regularized SVD.
    Svd,
    /// Normal equations refined by Newton–Schulz after adding prompts. No
    /// singular-value threshold is applied on this route.
    NewtonSchulz,
}

impl FitRoute {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitRoute::Svd => "svd",
            FitRoute::NewtonSchulz => "newton_schulz",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "svd" => Some(FitRoute::Svd),
            "newton_schulz" => Some(FitRoute::NewtonSchulz),
            _ => None,
        }
    }
}

/// The regularized pseudoinverse of a prompt matrix `D` (N×d), stored
/// transposed as `pinv_t = U Σ′ Vᵀ` (N×d), together with
/// `normal_inverse = (DᵀD + 2λI)⁻¹` (d×d).
///
/// The SVD and `Σ′` are only present when the state came from
/// [`build_pseudoinverse`]; states produced by incremental prompt updates or
/// loaded from disk carry just the two operators.
#[derive(Debug, Clone)]
pub struct PseudoinverseState {
    svd: Option<SvdFactors>,
    sigma_prime: Option<Vec<f64>>,
    config: RegularizationConfig,
    tolerance: f64,
    pinv_t: Matrix,
    normal_inverse: Matrix,
    route: FitRoute,
}

impl PseudoinverseState {
    /// Reassembles a state from stored operators.
    pub fn from_parts(
        config: RegularizationConfig,
        pinv_t: Matrix,
        normal_inverse: Matrix,
        route: FitRoute,
    ) -> Result<Self> {
        config.validate()?;
        let d = pinv_t.cols();
        if normal_inverse.shape() != (d, d) {
            return Err(Error::dims(
                "normal inverse",
                format!("{d}x{d}"),
                format!("{}x{}", normal_inverse.rows(), normal_inverse.cols()),
            ));
        }
        Ok(PseudoinverseState {
            svd: None,
            sigma_prime: None,
            config,
            tolerance: 0.0,
            pinv_t,
            normal_inverse,
            route,
        })
    }

    pub fn svd(&self) -> Option<&SvdFactors> {
        self.svd.as_ref()
    }

    pub fn sigma_prime(&self) -> Option<&[f64]> {
        self.sigma_prime.as_deref()
    }

    pub fn config(&self) -> &RegularizationConfig {
        &self.config
    }

    /// Machine tolerance of the decomposition; zero when no SVD is held.
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn pinv_t(&self) -> &Matrix {
        &self.pinv_t
    }

    pub fn normal_inverse(&self) -> &Matrix {
        &self.normal_inverse
    }

    pub fn route(&self) -> FitRoute {
        self.route
    }

    /// `(N, d)` of the prompt matrix this pseudoinverse was built from.
    pub fn source_dims(&self) -> (usize, usize) {
        self.pinv_t.shape()
    }
}

/// Builds the regularized pseudoinverse of `d`.
pub fn build_pseudoinverse(d: &Matrix, config: &RegularizationConfig) -> Result<PseudoinverseState> {
    config.validate()?;
    let svd = compute_svd(d)?;
    pseudoinverse_from_svd(svd, d.rows(), d.cols(), config)
}

/// Builds the regularized pseudoinverse from an existing decomposition. Only
/// `Σ′` depends on the configuration, so one SVD serves any number of
/// `(epsilon, lambda)` settings.
pub fn pseudoinverse_from_svd(
    svd: SvdFactors,
    n_rows: usize,
    n_cols: usize,
    config: &RegularizationConfig,
) -> Result<PseudoinverseState> {
    if svd.u.rows() != n_rows || svd.v.rows() != n_cols {
        return Err(Error::dims(
            "SVD factors",
            format!("{n_rows}x{n_cols}"),
            format!("{}x{}", svd.u.rows(), svd.v.rows()),
        ));
    }
    let tolerance = machine_tolerance(n_rows, n_cols, &svd.singulars);
    let sigma_prime = regularized_sigma_prime(&svd.singulars, config, tolerance)?;
    let pinv_t = svd.weighted_product(&sigma_prime);
    let normal_inverse = normal_inverse_from_svd(&svd, config.lambda, tolerance);
    Ok(PseudoinverseState {
        svd: Some(svd),
        sigma_prime: Some(sigma_prime),
        config: *config,
        tolerance,
        pinv_t,
        normal_inverse,
        route: FitRoute::Svd,
    })
}

/// `(DᵀD + 2λI)⁻¹ = I/(2λ) + V diag(1/(σ²+2λ) − 1/(2λ)) Vᵀ` for λ > 0.
/// With λ = 0 this is the pseudoinverse `V diag(1/σ²) Vᵀ` over directions
/// above the tolerance.
fn normal_inverse_from_svd(svd: &SvdFactors, lambda: f64, tolerance: f64) -> Matrix {
    let d = svd.v.rows();
    let r = svd.singulars.len();
    let two_lambda = 2.0 * lambda;
    let weights: Vec<f64> = svd
        .singulars
        .iter()
        .map(|&s| {
            let s2 = s * s;
            if two_lambda > 0.0 {
                -s2 / (two_lambda * (s2 + two_lambda))
            } else if s > tolerance && s > 0.0 {
                1.0 / s2
            } else {
                0.0
            }
        })
        .collect();
    let base = if two_lambda > 0.0 { 1.0 / two_lambda } else { 0.0 };
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        let vi = svd.v.row(i);
        for j in i..d {
            let vj = svd.v.row(j);
            let mut acc = 0.0;
            for k in 0..r {
                acc += vi[k] * weights[k] * vj[k];
            }
            if i == j {
                acc += base;
            }
            out.data[i * d + j] = acc;
            out.data[j * d + i] = acc;
        }
    }
    out
}

/// Result of a Newton–Schulz refinement.
#[derive(Debug, Clone)]
pub struct NewtonSchulzOutcome {
    pub inverse: Matrix,
    pub iterations: usize,
    pub final_residual: f64,
    /// `‖I − A·X_i‖_F` for the starting guess and every iterate.
    pub residuals: Vec<f64>,
}

/// Refines an approximate inverse of `a` with `X ← X(2I − A·X)` until the
/// Frobenius residual `‖I − A·X‖` is at most `tol`, or `max_iters` steps
/// have run (the last iterate is returned in that case).
///
/// Aborts with [`Error::Divergence`] if the residual grows on two consecutive
/// iterations.
pub fn newton_schulz_inverse(
    a: &Matrix,
    x0: &Matrix,
    max_iters: usize,
    tol: f64,
) -> Result<NewtonSchulzOutcome> {
    let d = a.rows();
    if a.cols() != d {
        return Err(Error::dims("Newton-Schulz operand", "square", format!("{}x{}", d, a.cols())));
    }
    if x0.shape() != (d, d) {
        return Err(Error::dims(
            "Newton-Schulz warm start",
            format!("{d}x{d}"),
            format!("{}x{}", x0.rows(), x0.cols()),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("Newton-Schulz tolerance must be positive, got {tol}")));
    }

    let identity = Matrix::identity(d);
    let mut x = x0.clone();
    let mut ax = a.matmul(&x)?;
    let mut residual = identity.sub(&ax)?.frobenius_norm();
    let mut residuals = vec![residual];
    let mut increases = 0;
    let mut iterations = 0;

    while residual > tol && iterations < max_iters {
        // 2I − AX
        let correction = ax.scale(-1.0).add_diagonal(2.0);
        x = x.matmul(&correction)?;
        ax = a.matmul(&x)?;
        let next = identity.sub(&ax)?.frobenius_norm();
        iterations += 1;
        residuals.push(next);
        if !next.is_finite() {
            return Err(Error::Divergence { residuals });
        }
        if next > residual {
            increases += 1;
            if increases >= 2 {
                return Err(Error::Divergence { residuals });
            }
        } else {
            increases = 0;
        }
        residual = next;
    }

    Ok(NewtonSchulzOutcome {
        inverse: x,
        iterations,
        final_residual: residual,
        residuals,
    })
}
