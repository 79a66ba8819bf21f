//! Independent reference implementations used by the integration tests.
//! Plain nested `Vec`s and textbook loops; nothing here touches the
//! library's linear algebra.

#![allow(dead_code)]

use linrep::{Matrix, PerformanceMatrix, PromptMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dense(m: &Matrix) -> Dense {
    m.row_iter().map(|r| r.to_vec()).collect()
}

pub fn transpose(a: &Dense) -> Dense {
    if a.is_empty() {
        return Vec::new();
    }
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn mul(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|r| {
            assert_eq!(r.len(), inner);
            (0..cols).map(|j| (0..inner).map(|k| r[k] * b[k][j]).sum()).collect()
        })
        .collect()
}

pub fn max_abs_diff(a: &Dense, b: &Dense) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

pub fn frobenius_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)))
        .sum::<f64>()
        .sqrt()
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let m = b[0].len();
    let mut aug: Dense = a
        .iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().chain(rb).copied().collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
            .unwrap();
        assert!(aug[pivot][col].abs() > 1e-300, "singular system");
        aug.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = aug[row][col] / aug[col][col];
                if f != 0.0 {
                    for k in col..n + m {
                        aug[row][k] -= f * aug[col][k];
                    }
                }
            }
        }
    }
    (0..n)
        .map(|i| (0..m).map(|j| aug[i][n + j] / aug[i][i]).collect())
        .collect()
}

pub fn identity(n: usize) -> Dense {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn inverse(a: &Dense) -> Dense {
    solve(a, &identity(a.len()))
}

/// `P · D · (DᵀD + 2λI)⁻¹`, computed as `P · (solve(A, Dᵀ))ᵀ`.
pub fn ridge_embeddings(p: &Dense, d: &Dense, lambda: f64) -> Dense {
    let dt = transpose(d);
    let mut a = mul(&dt, d);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 2.0 * lambda;
    }
    let x = solve(&a, &dt); // A⁻¹ Dᵀ, d×N
    mul(p, &transpose(&x))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// descending.
pub fn jacobi_eigenvalues(sym: &Dense) -> Vec<f64> {
    let n = sym.len();
    let mut a = sym.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(v.iter().map(|x| x / norm));
    }
    Matrix::new(n, d, data).unwrap()
}

pub fn prompts(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PromptMatrix {
    PromptMatrix::with_index_ids(unit_rows(rng, n, d)).unwrap()
}

pub fn outcome_rows(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<Vec<i8>> {
    (0..m)
        .map(|_| (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
        .collect()
}

pub fn model_ids(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("model_{i}")).collect()
}

pub fn prompt_ids(start: usize, n: usize) -> Vec<String> {
    (start..start + n).map(|j| j.to_string()).collect()
}

pub fn performance(rows: &[Vec<i8>]) -> PerformanceMatrix {
    let n = rows.first().map_or(0, Vec::len);
    PerformanceMatrix::from_rows(rows, model_ids(rows.len()), prompt_ids(0, n)).unwrap()
}

pub fn random_performance(rng: &mut ChaCha8Rng, m: usize, n: usize) -> PerformanceMatrix {
    performance(&outcome_rows(rng, m, n))
}

pub fn perf_dense(p: &PerformanceMatrix) -> Dense {
    (0..p.n_models())
        .map(|i| p.row(i).iter().map(|&v| f64::from(v)).collect())
        .collect()
}

/// Orthogonal matrix from Gram–Schmidt on a Gaussian draw.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Dense {
    let mut basis: Dense = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

pub fn to_matrix(a: &Dense) -> Matrix {
    Matrix::from_rows(a).unwrap()
}

/// Mann–Whitney AUC by counting every (positive, negative) pair.
pub fn auc_pairs(scores: &[f64], labels: &[i8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != -1 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Sample Pearson correlation from the definition.
pub fn pearson_def(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
