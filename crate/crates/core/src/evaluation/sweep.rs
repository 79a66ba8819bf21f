//! Singular-value threshold sweep.

use rayon::prelude::*;

use super::{evaluate, EvalReport, Manifest};
use crate::embeddings::{fit_with_svd, PerformanceMatrix, PromptMatrix};
use crate::error::{Error, Result};
use crate::linalg::{compute_svd, RegularizationConfig};

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub epsilon: f64,
    /// Directions kept by the threshold, when the fit succeeded.
    pub kept_directions: Option<usize>,
    /// The evaluation, or the error message of a failed fit/evaluation.
    pub outcome: std::result::Result<EvalReport, String>,
}

/// Fits and evaluates once per threshold, reusing a single SVD of the source
/// prompts. Rows come back in input order. A failing threshold produces an
/// error row instead of aborting the sweep.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_sweep(
    prompts: &PromptMatrix,
    performance: &PerformanceMatrix,
    targets: &PromptMatrix,
    target_perf: &PerformanceMatrix,
    manifest: &Manifest,
    epsilons: &[f64],
    lambda: f64,
) -> Result<Vec<SweepRow>> {
    if epsilons.is_empty() {
        return Err(Error::input("epsilon sweep needs at least one value"));
    }
    if let Some(w) = epsilons.windows(2).find(|w| !(w[0] <= w[1])) {
        return Err(Error::input(format!(
            "epsilons must be sorted ascending, found {} before {}",
            w[0], w[1]
        )));
    }
    if prompts.is_empty() {
        return Err(Error::input("cannot fit on zero source prompts"));
    }
    let svd = compute_svd(prompts.embeddings())?;

    let rows = epsilons
        .par_iter()
        .map(|&epsilon| {
            let run = || -> Result<(usize, EvalReport)> {
                let config = RegularizationConfig::new(epsilon, lambda)?;
                let state = fit_with_svd(prompts, performance, svd.clone(), &config)?;
                let kept = state
                    .pinv()
                    .sigma_prime()
                    .map_or(0, |s| s.iter().filter(|&&v| v != 0.0).count());
                let report = evaluate(state.embeddings(), targets, target_perf, manifest)?;
                Ok((kept, report))
            };
            match run() {
                Ok((kept, report)) => SweepRow {
                    epsilon,
                    kept_directions: Some(kept),
                    outcome: Ok(report),
                },
                Err(e) => SweepRow {
                    epsilon,
                    kept_directions: None,
                    outcome: Err(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}
