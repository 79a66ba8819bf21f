mod common;

use common::*;
use linrep::linalg::FitRoute;
use linrep::{benchmark_vector, fit, Error, Matrix, PerformanceMatrix, PromptMatrix, RegularizationConfig};
use proptest::prelude::*;
use rand::Rng;

fn cfg(epsilon: f64, lambda: f64) -> RegularizationConfig {
    RegularizationConfig::new(epsilon, lambda).unwrap()
}

#[test]
fn fit_matches_ridge_oracle_over_random_instances() {
    let mut r = rng(100);
    for _ in 0..20 {
        let n = r.random_range(5..=50);
        let d = r.random_range(3..=16);
        let m = r.random_range(2..=10);
        let lambda = if r.random::<bool>() { 0.1 } else { 1.0 };
        let p = prompts(&mut r, n, d);
        let perf = random_performance(&mut r, m, n);
        let state = fit(&p, &perf, &cfg(0.0, lambda)).unwrap();
        let want = ridge_embeddings(&perf_dense(&perf), &dense(p.embeddings()), lambda);
        let diff = max_abs_diff(&dense(state.embeddings().vectors()), &want);
        assert!(diff < 1e-8, "n={n} d={d} m={m} lambda={lambda}: {diff}");
    }
}

#[test]
fn provenance_records_the_fit() {
    let mut r = rng(1);
    let p = prompts(&mut r, 10, 4);
    let state = fit(&p, &random_performance(&mut r, 3, 10), &cfg(0.0, 1.0)).unwrap();
    let prov = state.embeddings().provenance().unwrap();
    assert_eq!((prov.n_prompts, prov.dim, prov.n_models), (10, 4, 3));
    assert_eq!(prov.route, FitRoute::Svd);
}

#[test]
fn add_model_equals_full_refit_row() {
    let mut r = rng(200);
    for trial in 0..10 {
        let n = r.random_range(5..=60);
        let d = r.random_range(3..=20);
        let m = r.random_range(1..=8);
        let p = prompts(&mut r, n, d);
        let rows = outcome_rows(&mut r, m + 1, n);
        let config = cfg(if trial % 2 == 0 { 0.0 } else { 0.3 }, 1.0);
        let base = fit(&p, &performance(&rows[..m]), &config).unwrap();
        let added = base.add_model(&rows[m], &format!("model_{m}")).unwrap();
        let full = fit(&p, &performance(&rows), &config).unwrap();
        let diff = added.embeddings().vectors().max_abs_diff(full.embeddings().vectors());
        assert!(diff < 1e-12, "trial {trial}: {diff}");
        for i in 0..m {
            assert_eq!(added.embeddings().row(i), base.embeddings().row(i));
        }
    }
}

#[test]
fn add_models_batch_matches_sequential() {
    let mut r = rng(201);
    let p = prompts(&mut r, 40, 8);
    let rows = outcome_rows(&mut r, 7, 40);
    let base = fit(&p, &performance(&rows[..3]), &cfg(0.0, 1.0)).unwrap();
    let mut seq = base.clone();
    for (i, row) in rows.iter().enumerate().skip(3) {
        seq = seq.add_model(row, &format!("model_{i}")).unwrap();
    }
    let batch = PerformanceMatrix::from_rows(&rows[3..], (3..7).map(|i| format!("model_{i}")).collect(), prompt_ids(0, 40)).unwrap();
    let all = base.add_models(&batch).unwrap();
    assert_eq!(all.embeddings().vectors(), seq.embeddings().vectors());
    assert_eq!(all.performance(), seq.performance());
}

fn add_prompts_case(seed: u64, n: usize, d: usize, m: usize, n_add: usize) -> (f64, Vec<f64>) {
    let mut r = rng(seed);
    let all = prompts(&mut r, n + n_add, d);
    let rows = outcome_rows(&mut r, m, n + n_add);
    let first: Vec<usize> = (0..n).collect();
    let rest: Vec<usize> = (n..n + n_add).collect();
    let perf_all = performance(&rows);
    let base = fit(&all.select(&first).unwrap(), &perf_all.select_prompts(&first).unwrap(), &cfg(0.0, 1.0)).unwrap();
    let new_p = all.select(&rest).unwrap();
    let new_perf = perf_all.select_prompts(&rest).unwrap();
    let update = base.add_prompts(&new_p, &new_perf, 50, 1e-10).unwrap();
    let refit = fit(&all, &perf_all, &cfg(0.0, 1.0)).unwrap();
    let diff = frobenius_diff(
        &dense(update.state.embeddings().vectors()),
        &dense(refit.embeddings().vectors()),
    );
    assert_eq!(update.state.pinv().route(), FitRoute::NewtonSchulz);
    assert_eq!(update.state.prompts().len(), n + n_add);
    (diff, update.newton_schulz.unwrap().residuals)
}

#[test]
fn add_prompts_matches_refit() {
    // small documented case, then a spread of batch sizes
    let (diff, _) = add_prompts_case(7, 30, 6, 4, 5);
    assert!(diff < 1e-6, "{diff}");
    for (seed, n, d, m, n_add) in [(1, 40, 8, 3, 1), (2, 40, 8, 3, 5), (3, 40, 8, 3, 20), (4, 12, 10, 2, 6)] {
        let (diff, residuals) = add_prompts_case(seed, n, d, m, n_add);
        assert!(diff < 1e-6, "seed {seed}: {diff}");
        assert!(residuals.windows(2).all(|w| w[1] < w[0]), "{residuals:?}");
    }
}

#[test]
fn add_prompts_refreshes_normal_inverse() {
    let mut r = rng(9);
    let all = prompts(&mut r, 25, 5);
    let perf = random_performance(&mut r, 2, 25);
    let first: Vec<usize> = (0..20).collect();
    let rest: Vec<usize> = (20..25).collect();
    let base = fit(&all.select(&first).unwrap(), &perf.select_prompts(&first).unwrap(), &cfg(0.0, 1.0)).unwrap();
    let upd = base
        .add_prompts(&all.select(&rest).unwrap(), &perf.select_prompts(&rest).unwrap(), 50, 1e-10)
        .unwrap();
    let a = dense(all.embeddings());
    let mut normal = mul(&transpose(&a), &a);
    for (i, row) in normal.iter_mut().enumerate() {
        row[i] += 2.0;
    }
    assert!(max_abs_diff(&dense(upd.state.pinv().normal_inverse()), &inverse(&normal)) < 1e-10);
}

#[test]
fn add_zero_prompts_is_identity() {
    let mut r = rng(4);
    let p = prompts(&mut r, 10, 3);
    let perf = random_performance(&mut r, 2, 10);
    let state = fit(&p, &perf, &cfg(0.0, 1.0)).unwrap();
    let empty = PromptMatrix::new(Matrix::zeros(0, 3), vec![]).unwrap();
    let empty_perf = PerformanceMatrix::new(vec![], model_ids(2), vec![]).unwrap();
    let upd = state.add_prompts(&empty, &empty_perf, 50, 1e-10).unwrap();
    assert!(upd.newton_schulz.is_none());
    assert_eq!(upd.state.embeddings().vectors(), state.embeddings().vectors());
}

#[test]
fn add_prompts_rejects_lambda_zero() {
    let mut r = rng(4);
    let p = prompts(&mut r, 10, 3);
    let perf = random_performance(&mut r, 2, 10);
    let state = fit(&p, &perf, &cfg(0.0, 0.0)).unwrap();
    let more = prompts(&mut r, 1, 3);
    let more = PromptMatrix::new(more.embeddings().clone(), vec!["10".into()]).unwrap();
    let more_perf = PerformanceMatrix::new(vec![1, -1], model_ids(2), vec!["10".into()]).unwrap();
    let err = state.add_prompts(&more, &more_perf, 50, 1e-10).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn duplicate_prompt_pulls_scores_toward_its_label() {
    let mut r = rng(31);
    let n = 30;
    let p = prompts(&mut r, n, 6);
    let perf = random_performance(&mut r, 3, n);
    let state = fit(&p, &perf, &cfg(0.0, 1.0)).unwrap();
    // duplicate prompt 0 with its own outcomes
    let dup = PromptMatrix::new(Matrix::from_rows(&[p.row(0)]).unwrap(), vec![n.to_string()]).unwrap();
    let dup_rows: Vec<Vec<i8>> = (0..3).map(|i| vec![perf.get(i, 0)]).collect();
    let dup_perf = PerformanceMatrix::from_rows(&dup_rows, model_ids(3), vec![n.to_string()]).unwrap();
    let upd = state.add_prompts(&dup, &dup_perf, 50, 1e-10).unwrap();

    let all = p.concat(&dup).unwrap();
    let mut rows: Vec<Vec<i8>> = (0..3).map(|i| perf.row(i).to_vec()).collect();
    for (row, extra) in rows.iter_mut().zip(&dup_rows) {
        row.extend(extra);
    }
    let all_perf = PerformanceMatrix::from_rows(&rows, model_ids(3), prompt_ids(0, n + 1)).unwrap();
    let refit = fit(&all, &all_perf, &cfg(0.0, 1.0)).unwrap();
    assert!(upd.state.embeddings().vectors().max_abs_diff(refit.embeddings().vectors()) < 1e-6);

    // a query equal to the duplicated prompt moves toward that label
    for i in 0..3 {
        let before = state.embeddings().predict_success(i, p.row(0)).unwrap();
        let after = upd.state.embeddings().predict_success(i, p.row(0)).unwrap();
        let label = f64::from(perf.get(i, 0));
        assert!((after - before) * label > 0.0, "model {i}: {before} -> {after} label {label}");
    }
}

#[test]
fn epsilon_above_largest_singular_gives_zero_embeddings() {
    let mut r = rng(12);
    let p = prompts(&mut r, 20, 4);
    let perf = random_performance(&mut r, 3, 20);
    let big = linrep::linalg::compute_svd(p.embeddings()).unwrap().max_singular() * 1.5;
    let state = fit(&p, &perf, &cfg(big, 1.0)).unwrap();
    assert!(state.embeddings().vectors().as_slice().iter().all(|v| *v == 0.0));
    let targets = prompts(&mut r, 5, 4);
    let scores = state.embeddings().predict_matrix(&targets).unwrap();
    assert!(scores.as_slice().iter().all(|v| *v == 0.0));
}

#[test]
fn embeddings_shrink_with_lambda_and_epsilon() {
    let mut r = rng(14);
    let p = prompts(&mut r, 40, 8);
    let perf = random_performance(&mut r, 4, 40);
    let norm = |e: f64, l: f64| fit(&p, &perf, &cfg(e, l)).unwrap().embeddings().vectors().frobenius_norm();
    let mut prev = f64::INFINITY;
    for l in [0.0, 0.05, 0.5, 1.0, 4.0] {
        let v = norm(0.0, l);
        assert!(v <= prev);
        prev = v;
    }
    let mut prev = f64::INFINITY;
    for e in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0] {
        let v = norm(e, 1.0);
        assert!(v <= prev, "eps {e}");
        prev = v;
    }
}

#[test]
fn predictions_are_thread_safe_and_deterministic() {
    let mut r = rng(15);
    let p = prompts(&mut r, 50, 8);
    let perf = random_performance(&mut r, 6, 50);
    let state = fit(&p, &perf, &cfg(0.0, 1.0)).unwrap();
    let targets = prompts(&mut r, 30, 8);
    let want = state.embeddings().predict_matrix(&targets).unwrap();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|_| s.spawn(|| state.embeddings().predict_matrix(&targets).unwrap()))
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), want);
        }
    });
    let again = fit(&p, &perf, &cfg(0.0, 1.0)).unwrap();
    assert_eq!(again.embeddings().vectors(), state.embeddings().vectors());
}

#[test]
fn mismatched_dims_are_rejected() {
    let mut r = rng(16);
    let p = prompts(&mut r, 10, 4);
    let state = fit(&p, &random_performance(&mut r, 2, 10), &cfg(0.0, 1.0)).unwrap();
    let wrong = prompts(&mut r, 3, 5);
    assert!(state.embeddings().predict_matrix(&wrong).is_err());
    assert!(state.add_model(&[1, -1], "x").is_err());
    assert!(fit(&p, &random_performance(&mut r, 2, 9), &cfg(0.0, 1.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rotation_equivariance(seed in any::<u64>(), n in 3usize..30, d in 2usize..8, m in 1usize..5) {
        let mut r = rng(seed);
        let p = prompts(&mut r, n, d);
        let perf = random_performance(&mut r, m, n);
        let targets = prompts(&mut r, 6, d);
        let q = random_orthogonal(&mut r, d);
        let rot = |pm: &PromptMatrix| PromptMatrix::with_index_ids(to_matrix(&mul(&dense(pm.embeddings()), &q))).unwrap();

        let base = fit(&p, &perf, &cfg(0.0, 1.0)).unwrap();
        let turned = fit(&rot(&p), &perf, &cfg(0.0, 1.0)).unwrap();
        let s0 = base.embeddings().predict_matrix(&targets).unwrap();
        let s1 = turned.embeddings().predict_matrix(&rot(&targets)).unwrap();
        prop_assert!(s0.max_abs_diff(&s1) < 1e-8);
        let mapped = mul(&dense(base.embeddings().vectors()), &q);
        prop_assert!(max_abs_diff(&mapped, &dense(turned.embeddings().vectors())) < 1e-8);
    }

    #[test]
    fn positive_scaling_keeps_labels_and_argmax(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let p = prompts(&mut r, 20, 5);
        let perf = random_performance(&mut r, 4, 20);
        let emb = fit(&p, &perf, &cfg(0.0, 1.0)).unwrap().embeddings().clone();
        let scaled = linrep::ModelEmbeddings::new(emb.vectors().scale(c), emb.model_ids().to_vec(), None).unwrap();
        let targets = prompts(&mut r, 10, 5);
        let a = emb.predict_matrix(&targets).unwrap();
        let b = scaled.predict_matrix(&targets).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert_eq!(*x > 0.0, *y > 0.0);
        }
        prop_assert_eq!(
            linrep::evaluation::select_models(&a).unwrap(),
            linrep::evaluation::select_models(&b).unwrap()
        );
    }

    #[test]
    fn benchmark_score_is_mean_of_prompt_scores(seed in any::<u64>(), k in 1usize..15) {
        let mut r = rng(seed);
        let p = prompts(&mut r, 20, 6);
        let perf = random_performance(&mut r, 3, 20);
        let emb = fit(&p, &perf, &cfg(0.0, 1.0)).unwrap().embeddings().clone();
        let targets = prompts(&mut r, 15, 6);
        let members: Vec<usize> = (0..k).collect();
        let v = benchmark_vector(&targets, &members).unwrap();
        for i in 0..3 {
            let agg = emb.benchmark_score(i, &v).unwrap();
            let mean = members.iter().map(|&j| emb.predict_success(i, targets.row(j)).unwrap()).sum::<f64>() / k as f64;
            prop_assert!((agg - mean).abs() < 1e-12);
        }
    }
}
