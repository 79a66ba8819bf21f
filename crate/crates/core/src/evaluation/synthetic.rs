//! Planted-model synthetic data.
//!
//! Each model is a random unit vector `w`; its outcome on a prompt `x` is
//! `sign(w · x)` (zero counts as success), independently flipped with
//! probability `label_noise`. Prompts are uniform on the unit sphere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Manifest;
use crate::embeddings::{index_ids, ModelEmbeddings, PerformanceMatrix, PromptMatrix};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_models: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub dim: usize,
    pub label_noise: f64,
    pub seed: u64,
    /// Target prompts are assigned to benchmarks round-robin.
    pub n_benchmarks: usize,
}

impl SyntheticSpec {
    pub fn new(n_models: usize, n_source: usize, n_target: usize, dim: usize) -> Self {
        SyntheticSpec {
            n_models,
            n_source,
            n_target,
            dim,
            label_noise: 0.0,
            seed: 0,
            n_benchmarks: 4,
        }
    }

    pub fn with_noise(mut self, p: f64) -> Self {
        self.label_noise = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_benchmarks(mut self, n: usize) -> Self {
        self.n_benchmarks = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_models", self.n_models),
            ("n_source", self.n_source),
            ("n_target", self.n_target),
            ("dim", self.dim),
            ("n_benchmarks", self.n_benchmarks),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synthetic {name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Config(format!(
                "label noise must be in [0, 1), got {}",
                self.label_noise
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub source_prompts: PromptMatrix,
    pub source_perf: PerformanceMatrix,
    pub target_prompts: PromptMatrix,
    pub target_perf: PerformanceMatrix,
    pub planted: ModelEmbeddings,
    pub manifest: Manifest,
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let mut data = Vec::with_capacity(n * d);
    while data.len() < n * d {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        // a zero draw has probability zero; redraw rather than divide by it
        if norm > 0.0 {
            data.extend(v.iter().map(|x| x / norm));
        }
    }
    Matrix::new(n, d, data).expect("finite by construction")
}

fn outcomes(
    rng: &mut ChaCha8Rng,
    planted: &Matrix,
    prompts: &Matrix,
    noise: f64,
) -> Vec<i8> {
    let mut out = Vec::with_capacity(planted.rows() * prompts.rows());
    for i in 0..planted.rows() {
        for j in 0..prompts.rows() {
            let clean: i8 = if dot(planted.row(i), prompts.row(j)) >= 0.0 { 1 } else { -1 };
            // always draw so the noise level does not shift the stream
            let flip = rng.random::<f64>() < noise;
            out.push(if flip { -clean } else { clean });
        }
    }
    out
}

/// Deterministic for a given spec (ChaCha8 seeded with `spec.seed`).
/// Prompt ids are row indices and model ids are `model_<i>`, matching what
/// the file loaders assign by default.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let planted = unit_rows(&mut rng, spec.n_models, spec.dim);
    let source = unit_rows(&mut rng, spec.n_source, spec.dim);
    let target = unit_rows(&mut rng, spec.n_target, spec.dim);
    let source_out = outcomes(&mut rng, &planted, &source, spec.label_noise);
    let target_out = outcomes(&mut rng, &planted, &target, spec.label_noise);

    let model_ids = index_ids("model_", spec.n_models);
    let source_prompts = PromptMatrix::with_index_ids(source)?;
    let target_prompts = PromptMatrix::with_index_ids(target)?;
    let source_perf = PerformanceMatrix::new(
        source_out,
        model_ids.clone(),
        source_prompts.prompt_ids().to_vec(),
    )?;
    let target_perf = PerformanceMatrix::new(
        target_out,
        model_ids.clone(),
        target_prompts.prompt_ids().to_vec(),
    )?;
    let manifest = Manifest::from_ids(
        (0..spec.n_target)
            .map(|j| format!("bench_{}", j % spec.n_benchmarks))
            .collect(),
    )?;
    Ok(SyntheticData {
        source_prompts,
        source_perf,
        target_prompts,
        target_perf,
        planted: ModelEmbeddings::new(planted, model_ids, None)?,
        manifest,
    })
}
