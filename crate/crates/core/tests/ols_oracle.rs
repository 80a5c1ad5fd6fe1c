//! Least squares against the normal equations solved by Gaussian elimination.

use landex_core::regress::{hc0_se, ols, wls, DesignMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Solves `A x = b` with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (r, &yi) in rows.iter().zip(y) {
        for i in 0..k {
            xty[i] += r[i] * yi;
            for j in 0..k {
                xtx[i][j] += r[i] * r[j];
            }
        }
    }
    gauss_solve(xtx, xty)
}

fn random_system(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let y = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    (rows, y)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn matches_normal_equations_on_random_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (rows, y) = random_system(&mut rng, 50, 5);
        let x = DesignMatrix::from_rows_unlabelled(&rows).unwrap();
        let fit = ols(&x, &y).unwrap();
        let oracle = normal_equations(&rows, &y);
        for (b, o) in fit.coefficients.iter().zip(&oracle) {
            assert!((b - o).abs() <= 1e-8 * o.abs().max(1.0), "{b} vs {o}");
        }
        let xte = x.t_mul_vec(&fit.residuals);
        let frob: f64 = (0..5).map(|j| norm(x.column(j)).powi(2)).sum::<f64>().sqrt();
        assert!(norm(&xte) / (frob * norm(&fit.residuals)) < 1e-8);
    }
}

#[test]
fn hc0_matches_sandwich_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (rows, y) = random_system(&mut rng, 30, 3);
    let x = DesignMatrix::from_rows_unlabelled(&rows).unwrap();
    let fit = ols(&x, &y).unwrap();

    // (X'X)^-1 column by column, then the meat X' diag(e^2) X
    let k = 3;
    let mut xtx = vec![vec![0.0; k]; k];
    let mut meat = vec![vec![0.0; k]; k];
    for (r, e) in rows.iter().zip(&fit.residuals) {
        for i in 0..k {
            for j in 0..k {
                xtx[i][j] += r[i] * r[j];
                meat[i][j] += e * e * r[i] * r[j];
            }
        }
    }
    let inv: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let unit = (0..k).map(|i| if i == c { 1.0 } else { 0.0 }).collect();
            gauss_solve(xtx.clone(), unit)
        })
        .collect(); // inv[c] is column c; symmetric anyway
    for j in 0..k {
        let mut v = 0.0;
        for a in 0..k {
            for b in 0..k {
                v += inv[j][a] * meat[a][b] * inv[b][j];
            }
        }
        assert!((fit.robust_se[j] - v.sqrt()).abs() < 1e-12 * v.sqrt().max(1.0));
    }
    assert_eq!(hc0_se(&x, &fit.residuals).unwrap(), fit.robust_se);
}

#[test]
fn wls_equals_ols_on_replicated_rows() {
    // integer weight w on a row equals repeating that row w times
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (rows, y) = random_system(&mut rng, 20, 3);
    let weights: Vec<f64> = (0..20).map(|_| rng.gen_range(1..4) as f64).collect();
    let mut rep_rows = Vec::new();
    let mut rep_y = Vec::new();
    for ((r, yi), w) in rows.iter().zip(&y).zip(&weights) {
        for _ in 0..*w as usize {
            rep_rows.push(r.clone());
            rep_y.push(*yi);
        }
    }
    let weighted = wls(&DesignMatrix::from_rows_unlabelled(&rows).unwrap(), &y, &weights).unwrap();
    let replicated = normal_equations(&rep_rows, &rep_y);
    for (a, b) in weighted.coefficients.iter().zip(&replicated) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn f32_agrees_with_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (rows, y) = random_system(&mut rng, 40, 4);
    let rows32: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
    let y32: Vec<f32> = y.iter().map(|&v| v as f32).collect();
    let a = ols(&DesignMatrix::from_rows_unlabelled(&rows).unwrap(), &y).unwrap();
    let b = ols(&DesignMatrix::from_rows_unlabelled(&rows32).unwrap(), &y32).unwrap();
    for (p, q) in a.coefficients.iter().zip(&b.coefficients) {
        assert!((p - *q as f64).abs() < 1e-4 * p.abs().max(1.0));
    }
}

proptest! {
    #[test]
    fn residuals_orthogonal_to_columns(seed in any::<u64>(), n in 6usize..40, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, y) = random_system(&mut rng, n, k);
        let x = DesignMatrix::from_rows_unlabelled(&rows).unwrap();
        let fit = ols(&x, &y).unwrap();
        let xte = x.t_mul_vec(&fit.residuals);
        prop_assert!(norm(&xte) <= 1e-9 * norm(&y).max(1.0) * (n as f64));
        let fitted = x.mul_vec(&fit.coefficients);
        for i in 0..n {
            prop_assert!((fitted[i] + fit.residuals[i] - y[i]).abs() < 1e-12 * y[i].abs().max(1.0) * 10.0);
        }
    }
}
