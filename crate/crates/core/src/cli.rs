//! Command-line interface. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code:
//! 0 success, 1 input or configuration error, 2 numerical failure,
//! 3 undefined metric.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::KnnConfig;
use crate::embeddings::{fit, index_ids, FitState, ModelEmbeddings, PerformanceMatrix, PromptMatrix};
use crate::error::{Error, Result};
use crate::evaluation::{
    epsilon_sweep, evaluate_trials, generate_synthetic, roc_auc, roc_curve, select_models,
    BestSourcePredictor, KnnPredictor, LabeledScores, Predictor, SyntheticSpec,
    METRIC_NAMES,
};
use crate::io_store::{self, format_real, Dtype, RunConfig};
use crate::linalg::Matrix;

#[derive(Debug, Parser)]
#[command(name = "linrep", version, about = "Linear model embeddings from prompt outcomes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Shared run settings: a config file, then per-key overrides.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// key=value file (epsilon, lambda, knn_k, ns_max_iters, ns_tol, seed)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub ns_max_iters: Option<usize>,
    #[arg(long)]
    pub ns_tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => io_store::read_config(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.knn_k {
            cfg.knn_k = v;
        }
        if let Some(v) = self.ns_max_iters {
            cfg.ns_max_iters = v;
        }
        if let Some(v) = self.ns_tol {
            cfg.ns_tol = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.regularization()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Knn,
    Bsp,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit model embeddings from source prompts and outcomes.
    Fit {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        perf: PathBuf,
        /// One model id per line; defaults to model_<i>.
        #[arg(long)]
        model_ids: Option<PathBuf>,
        #[arg(long)]
        out_embeddings: PathBuf,
        #[arg(long)]
        out_ids: PathBuf,
        /// Also persist the full state for add-model / add-prompts.
        #[arg(long)]
        state_dir: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score every model on every target prompt (M×T matrix file).
    Predict {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out_scores: PathBuf,
    },
    /// Pick the highest-scoring model per target prompt (CSV).
    Select {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out_selections: PathBuf,
    },
    /// Evaluate embeddings or a baseline on held-out targets.
    Eval {
        #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline", requires = "ids")]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        ids: Option<PathBuf>,
        #[arg(long, value_enum, requires = "source_perf")]
        baseline: Option<Baseline>,
        /// Source prompts (kNN baseline).
        #[arg(long)]
        source_prompts: Option<PathBuf>,
        /// Source outcomes (baselines).
        #[arg(long)]
        source_perf: Option<PathBuf>,
        /// Model ids for baseline runs; defaults to model_<i>.
        #[arg(long)]
        model_ids: Option<PathBuf>,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        target_perf: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        /// Target prompts drawn per trial; defaults to all of them.
        #[arg(long)]
        sample_size: Option<usize>,
        #[arg(long)]
        out_report: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Embed one more model into a saved state without refitting.
    AddModel {
        #[arg(long)]
        state_dir: PathBuf,
        /// Performance file with a single row over the stored source prompts.
        #[arg(long)]
        new_perf_row: PathBuf,
        #[arg(long)]
        id: String,
    },
    /// Append source prompts to a saved state via Newton–Schulz refinement.
    AddPrompts {
        #[arg(long)]
        state_dir: PathBuf,
        #[arg(long)]
        new_prompts: PathBuf,
        /// Outcomes of every stored model on the new prompts.
        #[arg(long)]
        new_perf: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a list of singular-value thresholds (CSV).
    SweepEpsilon {
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        perf: PathBuf,
        #[arg(long)]
        model_ids: Option<PathBuf>,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        target_perf: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write a planted-model synthetic dataset.
    GenSynthetic {
        #[arg(long)]
        models: usize,
        #[arg(long)]
        source: usize,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 4)]
        benchmarks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// ROC curve of a score matrix against outcomes (CSV of fpr,tpr).
    ExportRoc {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Time fit and model addition over doubling sizes (CSV).
    BenchScaling {
        #[arg(long, default_value_t = 2000)]
        max_models: usize,
        #[arg(long, default_value_t = 8000)]
        max_prompts: usize,
        #[arg(long, default_value_t = 384)]
        dim: usize,
        /// Grid points per axis, doubling up to the maximum.
        #[arg(long, default_value_t = 4)]
        points: usize,
        /// Timings keep the fastest of this many runs.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_csv: PathBuf,
    },
}

/// File names written by `gen-synthetic`.
pub mod synthetic_files {
    pub const SOURCE_PROMPTS: &str = "source_prompts.mat";
    pub const SOURCE_PERF: &str = "source_perf.prf";
    pub const TARGET_PROMPTS: &str = "target_prompts.mat";
    pub const TARGET_PERF: &str = "target_perf.prf";
    pub const MANIFEST: &str = "manifest.tsv";
    pub const MODEL_IDS: &str = "model_ids.txt";
    pub const PLANTED: &str = "planted.mat";
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn echo_config(cfg: &RunConfig) {
    eprintln!("config: {}", cfg.render().trim_end().replace('\n', " "));
}

fn load_prompts(path: &Path) -> Result<PromptMatrix> {
    PromptMatrix::with_index_ids(io_store::read_matrix(path)?)
}

fn model_ids_or_default(path: Option<&Path>, n: usize) -> Result<Vec<String>> {
    match path {
        Some(p) => io_store::read_model_ids(p),
        None => Ok(index_ids("model_", n)),
    }
}

fn load_perf(path: &Path, model_ids: Option<&Path>) -> Result<PerformanceMatrix> {
    let payload = io_store::read_perf(path)?;
    let ids = model_ids_or_default(model_ids, payload.rows)?;
    let cols = payload.cols;
    payload.into_matrix(ids, index_ids("", cols))
}

fn load_perf_with_ids(path: &Path, ids: &[String]) -> Result<PerformanceMatrix> {
    let payload = io_store::read_perf(path)?;
    let cols = payload.cols;
    payload.into_matrix(ids.to_vec(), index_ids("", cols))
}

fn optional_real(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), format_real)
}

fn execute(command: &Command) -> Result<()> {
    eprintln!("command: {command:?}");
    match command {
        Command::Fit {
            prompts,
            perf,
            model_ids,
            out_embeddings,
            out_ids,
            state_dir,
            config,
        } => {
            let cfg = config.resolve()?;
            echo_config(&cfg);
            let prompts = load_prompts(prompts)?;
            let perf = load_perf(perf, model_ids.as_deref())?;
            let state = fit(&prompts, &perf, &cfg.regularization()?)?;
            write_embeddings(out_embeddings, out_ids, state.embeddings())?;
            if let Some(dir) = state_dir {
                io_store::save_state(dir, &state)?;
            }
            println!(
                "fitted {} models on {} prompts (dim {})",
                perf.n_models(),
                prompts.len(),
                prompts.dim()
            );
            Ok(())
        }
        Command::Predict {
            embeddings,
            ids,
            targets,
            out_scores,
        } => {
            let emb = io_store::load_embeddings(embeddings, ids)?;
            let targets = load_prompts(targets)?;
            let scores = emb.predict_matrix(&targets)?;
            io_store::write_matrix(out_scores, &scores, Dtype::F64)
        }
        Command::Select {
            embeddings,
            ids,
            targets,
            out_selections,
        } => {
            let emb = io_store::load_embeddings(embeddings, ids)?;
            let targets = load_prompts(targets)?;
            let picks = select_models(&emb.predict_matrix(&targets)?)?;
            let mut out = String::from("prompt_index,model_id\n");
            for (j, &i) in picks.iter().enumerate() {
                let _ = writeln!(out, "{j},{}", emb.model_ids()[i]);
            }
            io_store::atomic_write(out_selections, out.as_bytes())
        }
        Command::Eval {
            embeddings,
            ids,
            baseline,
            source_prompts,
            source_perf,
            model_ids,
            targets,
            target_perf,
            manifest,
            trials,
            sample_size,
            out_report,
            config,
        } => {
            let cfg = config.resolve()?;
            echo_config(&cfg);
            let targets = load_prompts(targets)?;
            let manifest = io_store::read_manifest(manifest)?;
            // hold loaded inputs for the predictor borrows below
            let emb;
            let knn_inputs;
            let knn;
            let bsp;
            let (predictor, ids): (&dyn Predictor, Vec<String>) = match baseline {
                None => {
                    let (e, i) = (embeddings.as_ref(), ids.as_ref());
                    let (e, i) = e.zip(i).ok_or_else(|| {
                        Error::input("eval needs --embeddings and --ids, or --baseline")
                    })?;
                    emb = io_store::load_embeddings(e, i)?;
                    (&emb, emb.model_ids().to_vec())
                }
                Some(b) => {
                    let sp = source_perf
                        .as_ref()
                        .ok_or_else(|| Error::input("baselines need --source-perf"))?;
                    let perf = load_perf(sp, model_ids.as_deref())?;
                    let ids = perf.model_ids().to_vec();
                    match b {
                        Baseline::Bsp => {
                            bsp = BestSourcePredictor::new(&perf)?;
                            (&bsp, ids)
                        }
                        Baseline::Knn => {
                            let path = source_prompts.as_ref().ok_or_else(|| {
                                Error::input("the knn baseline needs --source-prompts")
                            })?;
                            knn_inputs = (load_prompts(path)?, perf);
                            knn_inputs.1.check_prompts_align(&knn_inputs.0)?;
                            knn = KnnPredictor {
                                prompts: &knn_inputs.0,
                                performance: &knn_inputs.1,
                                config: KnnConfig { k: cfg.knn_k },
                            };
                            (&knn, ids)
                        }
                    }
                }
            };
            let target_perf = load_perf_with_ids(target_perf, &ids)?;
            let report = evaluate_trials(
                predictor,
                &targets,
                &target_perf,
                &manifest,
                *trials,
                *sample_size,
                cfg.seed,
            )?;
            io_store::write_report(out_report, &report.rows)?;
            for row in report.rows.iter().filter(|r| r.benchmark_id.is_none()) {
                match row.stddev {
                    Some(s) => println!("{} {} ± {}", row.metric, optional_real(row.value), format_real(s)),
                    None => println!("{} {}", row.metric, optional_real(row.value)),
                }
            }
            report.require_defined()
        }
        Command::AddModel {
            state_dir,
            new_perf_row,
            id,
        } => {
            let state = io_store::load_state(state_dir)?;
            let row = io_store::read_perf(new_perf_row)?;
            if row.rows != 1 {
                return Err(Error::dims("new performance row", "1 row", format!("{} rows", row.rows)));
            }
            let updated = state.add_model(&row.outcomes, id)?;
            io_store::save_state(state_dir, &updated)?;
            let emb = updated.embeddings();
            println!(
                "models: {} -> {} (dim {})",
                state.embeddings().n_models(),
                emb.n_models(),
                emb.dim()
            );
            let values: Vec<String> = emb.row(emb.n_models() - 1).iter().map(|&v| format_real(v)).collect();
            println!("embedding {id}: {}", values.join(" "));
            Ok(())
        }
        Command::AddPrompts {
            state_dir,
            new_prompts,
            new_perf,
            config,
        } => {
            let cfg = config.resolve()?;
            echo_config(&cfg);
            let state = io_store::load_state(state_dir)?;
            eprintln!(
                "state regularization (used for this update): epsilon={} lambda={}",
                state.config().epsilon,
                state.config().lambda
            );
            let raw = io_store::read_matrix(new_prompts)?;
            let n_old = state.prompts().len();
            let new_prompts =
                PromptMatrix::new(raw.clone(), index_ids_from(n_old, raw.rows()))?;
            let payload = io_store::read_perf(new_perf)?;
            let new_perf = payload.into_matrix(
                state.performance().model_ids().to_vec(),
                new_prompts.prompt_ids().to_vec(),
            )?;
            let update = state.add_prompts(&new_prompts, &new_perf, cfg.ns_max_iters, cfg.ns_tol)?;
            println!(
                "prompts: {} -> {} (dim {}, models {})",
                n_old,
                update.state.prompts().len(),
                update.state.prompts().dim(),
                update.state.embeddings().n_models()
            );
            match &update.newton_schulz {
                Some(ns) => {
                    io_store::save_state(state_dir, &update.state)?;
                    println!(
                        "newton-schulz: {} iterations, final residual {}",
                        ns.iterations,
                        format_real(ns.final_residual)
                    );
                }
                None => println!("no prompts added; state unchanged"),
            }
            Ok(())
        }
        Command::SweepEpsilon {
            epsilons,
            prompts,
            perf,
            model_ids,
            targets,
            target_perf,
            manifest,
            out_csv,
            config,
        } => {
            let cfg = config.resolve()?;
            echo_config(&cfg);
            let prompts = load_prompts(prompts)?;
            let perf = load_perf(perf, model_ids.as_deref())?;
            let targets = load_prompts(targets)?;
            let target_perf = load_perf_with_ids(target_perf, perf.model_ids())?;
            let manifest = io_store::read_manifest(manifest)?;
            let mut eps = epsilons.clone();
            eps.sort_by(f64::total_cmp);
            let rows = epsilon_sweep(&prompts, &perf, &targets, &target_perf, &manifest, &eps, cfg.lambda)?;
            let mut out = format!("epsilon,kept_directions,{},error\n", METRIC_NAMES.join(","));
            for r in &rows {
                let _ = write!(out, "{},", format_real(r.epsilon));
                match &r.outcome {
                    Ok(report) => {
                        let metrics: Vec<String> = report.headline().iter().map(|&v| optional_real(v)).collect();
                        let _ = writeln!(out, "{},{},", r.kept_directions.unwrap_or(0), metrics.join(","));
                    }
                    Err(msg) => {
                        let _ = writeln!(out, ",,,,,,\"{}\"", msg.replace('"', "\"\""));
                    }
                }
            }
            io_store::atomic_write(out_csv, out.as_bytes())?;
            print!("{out}");
            Ok(())
        }
        Command::GenSynthetic {
            models,
            source,
            target,
            dim,
            noise,
            benchmarks,
            seed,
            out_dir,
        } => {
            use synthetic_files::*;
            let spec = SyntheticSpec::new(*models, *source, *target, *dim)
                .with_noise(*noise)
                .with_seed(*seed)
                .with_benchmarks(*benchmarks);
            let data = generate_synthetic(&spec)?;
            std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
                path: out_dir.clone(),
                source,
            })?;
            io_store::write_matrix(out_dir.join(SOURCE_PROMPTS), data.source_prompts.embeddings(), Dtype::F64)?;
            io_store::write_perf(out_dir.join(SOURCE_PERF), &data.source_perf)?;
            io_store::write_matrix(out_dir.join(TARGET_PROMPTS), data.target_prompts.embeddings(), Dtype::F64)?;
            io_store::write_perf(out_dir.join(TARGET_PERF), &data.target_perf)?;
            io_store::write_manifest(out_dir.join(MANIFEST), &data.manifest)?;
            io_store::write_model_ids(out_dir.join(MODEL_IDS), data.planted.model_ids())?;
            io_store::write_matrix(out_dir.join(PLANTED), data.planted.vectors(), Dtype::F64)?;
            println!("wrote synthetic data to {}", out_dir.display());
            Ok(())
        }
        Command::ExportRoc {
            scores,
            labels,
            out_csv,
        } => {
            let scores = io_store::read_matrix(scores)?;
            let labels = io_store::read_perf(labels)?.with_default_ids()?;
            let data = LabeledScores::pooled(&scores, &labels)?;
            let curve = roc_curve(&data)?;
            let mut out = String::from("fpr,tpr\n");
            for (x, y) in &curve {
                let _ = writeln!(out, "{},{}", format_real(*x), format_real(*y));
            }
            io_store::atomic_write(out_csv, out.as_bytes())?;
            println!("auc {}", format_real(roc_auc(&data)?));
            Ok(())
        }
        Command::BenchScaling {
            max_models,
            max_prompts,
            dim,
            points,
            repeats,
            seed,
            out_csv,
        } => {
            let rows = bench_scaling(*max_models, *max_prompts, *dim, *points, *repeats, *seed)?;
            let mut out = String::from("operation,size,seconds\n");
            for (op, size, secs) in &rows {
                let _ = writeln!(out, "{op},{size},{}", format_real(*secs));
            }
            io_store::atomic_write(out_csv, out.as_bytes())?;
            print!("{out}");
            Ok(())
        }
    }
}

fn index_ids_from(start: usize, n: usize) -> Vec<String> {
    (start..start + n).map(|j| j.to_string()).collect()
}

fn write_embeddings(out_embeddings: &Path, out_ids: &Path, emb: &ModelEmbeddings) -> Result<()> {
    io_store::write_matrix(out_embeddings, emb.vectors(), Dtype::F64)?;
    io_store::write_model_ids(out_ids, emb.model_ids())?;
    if let Some(p) = emb.provenance() {
        io_store::write_provenance(io_store::provenance_sidecar(out_embeddings), p)?;
    }
    Ok(())
}

fn doubling_grid(max: usize, points: usize) -> Vec<usize> {
    let mut sizes: Vec<usize> = (0..points)
        .map(|k| (max >> (points - 1 - k)).max(1))
        .collect();
    sizes.dedup();
    sizes
}

fn random_outcomes(rng: &mut ChaCha8Rng, m: usize, n: usize, prefix: &str) -> Result<PerformanceMatrix> {
    let outcomes = (0..m * n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
    PerformanceMatrix::new(outcomes, index_ids(prefix, m), index_ids("", n))
}

fn random_prompts(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Result<PromptMatrix> {
    let raw: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() - 0.5).collect();
    PromptMatrix::normalized(&Matrix::new(n, d, raw)?, index_ids("", n))
}

fn fastest<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        std::hint::black_box(f()?);
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// `(operation, size, seconds)` rows: `fit` over prompt counts with 16
/// models, then `add_models` over batch sizes against one fixed
/// pseudoinverse on `min(max_prompts, 1000)` prompts.
pub fn bench_scaling(
    max_models: usize,
    max_prompts: usize,
    dim: usize,
    points: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<(&'static str, usize, f64)>> {
    if max_models == 0 || max_prompts == 0 || dim == 0 || points == 0 {
        return Err(Error::input("bench-scaling sizes and points must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = RunConfig::default().regularization()?;
    let mut rows = Vec::new();

    let all_prompts = random_prompts(&mut rng, max_prompts, dim)?;
    let all_perf = random_outcomes(&mut rng, 16, max_prompts, "model_")?;
    for n in doubling_grid(max_prompts, points) {
        let idx: Vec<usize> = (0..n).collect();
        let prompts = all_prompts.select(&idx)?;
        let perf = all_perf.select_prompts(&idx)?;
        let secs = fastest(repeats, || fit(&prompts, &perf, &cfg))?;
        rows.push(("fit", n, secs));
    }

    let n_base = max_prompts.min(1000);
    let idx: Vec<usize> = (0..n_base).collect();
    let base: FitState = fit(&all_prompts.select(&idx)?, &all_perf.select_prompts(&idx)?, &cfg)?;
    let batch_all = random_outcomes(&mut rng, max_models, n_base, "new_")?;
    for m in doubling_grid(max_models, points) {
        let outcomes = batch_all.outcomes()[..m * n_base].to_vec();
        let batch = PerformanceMatrix::new(outcomes, index_ids("new_", m), index_ids("", n_base))?;
        let secs = fastest(repeats, || base.add_models(&batch))?;
        rows.push(("add_models", m, secs));
    }
    Ok(rows)
}
