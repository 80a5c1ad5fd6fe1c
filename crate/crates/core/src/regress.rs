//! Least squares: OLS and WLS through a Householder QR factorization, with
//! White (HC0) or HC1 heteroskedasticity-robust standard errors.
//!
//! Every accumulation runs in a fixed sequential order, so identical inputs
//! give bit-identical results.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;

/// A column that is (numerically) a combination of earlier columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dependency {
    pub label: String,
    /// Earlier columns it is spanned by; empty when the column is all zeros.
    pub depends_on: Vec<String>,
}

impl fmt::Display for Dependency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.depends_on.is_empty() {
            write!(f, "`{}` is identically zero", self.label)
        } else {
            write!(f, "`{}` is collinear with ", self.label)?;
            for (i, l) in self.depends_on.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "`{l}`")?;
            }
            Ok(())
        }
    }
}

fn join_dependencies(deps: &[Dependency]) -> String {
    deps.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressError {
    #[error("rank-deficient design: {}", join_dependencies(.dependencies))]
    RankDeficient { dependencies: Vec<Dependency> },
    #[error("dimension mismatch: expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("design has {rows} rows but {cols} columns")]
    Underdetermined { rows: usize, cols: usize },
    #[error("design has no columns")]
    NoColumns,
    #[error("duplicate column label `{0}`")]
    DuplicateLabel(String),
    #[error("weight {index} is {value}; weights must be positive")]
    NonPositiveWeight { index: usize, value: f64 },
}

/// Dense regressor matrix, stored column-major, with one label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    n_rows: usize,
    n_cols: usize,
    data: Vec<T>,
    labels: Vec<String>,
}

impl<T: Scalar> DesignMatrix<T> {
    pub fn zeros(n_rows: usize, labels: Vec<String>) -> Result<Self, RegressError> {
        let n_cols = labels.len();
        if n_cols == 0 {
            return Err(RegressError::NoColumns);
        }
        let mut seen = HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(RegressError::DuplicateLabel(dup.clone()));
        }
        Ok(Self {
            n_rows,
            n_cols,
            data: vec![T::zero(); n_rows * n_cols],
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<T>], labels: Vec<String>) -> Result<Self, RegressError> {
        let mut m = Self::zeros(rows.len(), labels)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m.n_cols {
                return Err(RegressError::DimensionMismatch {
                    expected: m.n_cols,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    /// Builds from rows with generated labels `x0, x1, ...`.
    pub fn from_rows_unlabelled(rows: &[Vec<T>]) -> Result<Self, RegressError> {
        let k = rows.first().map_or(0, Vec::len);
        Self::from_rows(rows, (0..k).map(|j| format!("x{j}")).collect())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[j * self.n_rows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[j * self.n_rows + i] = value;
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.data[j * self.n_rows..(j + 1) * self.n_rows]
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        (0..self.n_cols).map(|j| self.get(i, j)).collect()
    }

    /// `X b`.
    pub fn mul_vec(&self, b: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_rows];
        for (j, &bj) in b.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(self.column(j)) {
                *o = *o + x * bj;
            }
        }
        out
    }

    /// `X' v`.
    pub fn t_mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.n_cols).map(|j| dot(self.column(j), v)).collect()
    }

    /// Every row multiplied by the matching factor.
    pub fn scale_rows(&self, factors: &[T]) -> Self {
        let mut out = self.clone();
        for j in 0..self.n_cols {
            let col = &mut out.data[j * self.n_rows..(j + 1) * self.n_rows];
            for (x, &f) in col.iter_mut().zip(factors) {
                *x = *x * f;
            }
        }
        out
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Which robust variance estimator populates `robust_se`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Covariance {
    #[default]
    Hc0,
    /// HC0 scaled by `n / (n - k)`.
    Hc1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionResult<T> {
    pub coefficients: Vec<T>,
    pub residuals: Vec<T>,
    pub robust_se: Vec<T>,
    pub r_squared: T,
    /// `NaN` when `n == k`.
    pub adj_r_squared: T,
    pub n_obs: usize,
    pub labels: Vec<String>,
    pub covariance: Covariance,
}

impl<T: Scalar> RegressionResult<T> {
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// `(estimate, robust_se)` for a labelled term.
    pub fn term(&self, label: &str) -> Option<(T, T)> {
        self.index_of(label)
            .map(|j| (self.coefficients[j], self.robust_se[j]))
    }
}

/// Householder QR of a full-column-rank design.
struct Qr<T> {
    n: usize,
    k: usize,
    /// Column-major; Householder vectors on and below the diagonal, strict
    /// upper triangle of R above it.
    a: Vec<T>,
    r_diag: Vec<T>,
    betas: Vec<T>,
}

impl<T: Scalar> Qr<T> {
    fn factor(x: &DesignMatrix<T>) -> Result<Self, RegressError> {
        let (n, k) = (x.n_rows, x.n_cols);
        if n < k {
            return Err(RegressError::Underdetermined { rows: n, cols: k });
        }
        let mut a = x.data.clone();
        let col_norms: Vec<T> = (0..k).map(|j| norm(x.column(j))).collect();
        let tol = T::rank_tolerance();

        // `pivots[r]` is the column that produced reflection r; dependent
        // columns produce none.
        let mut pivots: Vec<usize> = Vec::with_capacity(k);
        let mut r_diag = Vec::with_capacity(k);
        let mut betas = Vec::with_capacity(k);
        let mut dependent: Vec<usize> = Vec::new();

        for j in 0..k {
            let r = pivots.len();
            let (head, tail) = a.split_at_mut((j + 1) * n);
            let col = &mut head[j * n + r..(j + 1) * n];
            let sub_norm = norm(col);
            if !(sub_norm > tol * col_norms[j]) {
                dependent.push(j);
                continue;
            }
            let alpha = if col[0] > T::zero() { -sub_norm } else { sub_norm };
            col[0] = col[0] - alpha;
            let beta = T::of(2.0) / dot(col, col);
            for c in 0..(k - j - 1) {
                let other = &mut tail[c * n + r..(c + 1) * n];
                let s = beta * dot(col, other);
                for (o, &v) in other.iter_mut().zip(col.iter()) {
                    *o = *o - s * v;
                }
            }
            pivots.push(j);
            r_diag.push(alpha);
            betas.push(beta);
        }

        if !dependent.is_empty() {
            let dependencies = dependent
                .iter()
                .map(|&j| Self::explain(x, &a, &r_diag, &pivots, j))
                .collect();
            return Err(RegressError::RankDeficient { dependencies });
        }
        Ok(Self {
            n,
            k,
            a,
            r_diag,
            betas,
        })
    }

    /// Expresses dependent column `j` in the independent columns before it.
    fn explain(
        x: &DesignMatrix<T>,
        a: &[T],
        r_diag: &[T],
        pivots: &[usize],
        j: usize,
    ) -> Dependency {
        let n = x.n_rows;
        let basis: Vec<usize> = pivots.iter().copied().take_while(|&p| p < j).collect();
        let m = basis.len();
        // R_II c = (Q' x_j)[..m]
        let mut c: Vec<T> = (0..m).map(|p| a[j * n + p]).collect();
        for p in (0..m).rev() {
            let mut s = c[p];
            for q in p + 1..m {
                s = s - a[basis[q] * n + p] * c[q];
            }
            c[p] = s / r_diag[p];
        }
        let scale = c.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
        let cutoff = T::of(1e-8).max(T::epsilon().sqrt()) * scale;
        let depends_on = if norm(x.column(j)) == T::zero() {
            Vec::new()
        } else {
            basis
                .iter()
                .zip(&c)
                .filter(|(_, v)| v.abs() > cutoff)
                .map(|(&col, _)| x.labels[col].clone())
                .collect()
        };
        Dependency {
            label: x.labels[j].clone(),
            depends_on,
        }
    }

    fn reflector(&self, r: usize) -> &[T] {
        &self.a[r * self.n + r..(r + 1) * self.n]
    }

    /// `R^{-1} Q' y`.
    fn solve(&self, y: &[T]) -> Vec<T> {
        let mut qty = y.to_vec();
        for r in 0..self.k {
            let v = self.reflector(r);
            let tail = &mut qty[r..];
            let s = self.betas[r] * dot(v, tail);
            for (t, &vi) in tail.iter_mut().zip(v) {
                *t = *t - s * vi;
            }
        }
        let mut b = qty[..self.k].to_vec();
        for p in (0..self.k).rev() {
            let mut s = b[p];
            for q in p + 1..self.k {
                s = s - self.a[q * self.n + p] * b[q];
            }
            b[p] = s / self.r_diag[p];
        }
        b
    }

    /// `(X'X)^{-1} = R^{-1} R^{-T}`, dense k x k, row-major.
    fn xtx_inverse(&self) -> Vec<T> {
        let k = self.k;
        // R^{-1}, row-major upper triangular
        let mut rinv = vec![T::zero(); k * k];
        for col in 0..k {
            for p in (0..=col).rev() {
                let mut s = if p == col { T::one() } else { T::zero() };
                for q in p + 1..=col {
                    s = s - self.a[q * self.n + p] * rinv[q * k + col];
                }
                rinv[p * k + col] = s / self.r_diag[p];
            }
        }
        let mut g = vec![T::zero(); k * k];
        for i in 0..k {
            for j in i..k {
                let start = j.max(i);
                let mut s = T::zero();
                for m in start..k {
                    s = s + rinv[i * k + m] * rinv[j * k + m];
                }
                g[i * k + j] = s;
                g[j * k + i] = s;
            }
        }
        g
    }
}

fn sandwich_diagonal<T: Scalar>(x: &DesignMatrix<T>, qr: &Qr<T>, residuals: &[T]) -> Vec<T> {
    let (n, k) = (x.n_rows, x.n_cols);
    let g = qr.xtx_inverse();
    let e2: Vec<T> = residuals.iter().map(|&e| e * e).collect();
    let mut w = vec![T::zero(); n];
    (0..k)
        .map(|j| {
            // w = X G[:, j]
            w.iter_mut().for_each(|v| *v = T::zero());
            for m in 0..k {
                let gm = g[m * k + j];
                if gm == T::zero() {
                    continue;
                }
                for (wi, &xi) in w.iter_mut().zip(x.column(m)) {
                    if xi != T::zero() {
                        *wi = *wi + xi * gm;
                    }
                }
            }
            w.iter()
                .zip(&e2)
                .fold(T::zero(), |acc, (&wi, &ei)| acc + ei * wi * wi)
        })
        .collect()
}

fn robust_se_from<T: Scalar>(
    x: &DesignMatrix<T>,
    qr: &Qr<T>,
    residuals: &[T],
    cov: Covariance,
) -> Vec<T> {
    let factor = match cov {
        Covariance::Hc0 => T::one(),
        Covariance::Hc1 => {
            let (n, k) = (x.n_rows, x.n_cols);
            if n > k {
                T::of_usize(n) / T::of_usize(n - k)
            } else {
                T::infinity()
            }
        }
    };
    sandwich_diagonal(x, qr, residuals)
        .into_iter()
        .map(|v| {
            if v == T::zero() {
                T::zero()
            } else {
                (v * factor).sqrt()
            }
        })
        .collect()
}

fn check_len(expected: usize, got: usize) -> Result<(), RegressError> {
    if expected != got {
        return Err(RegressError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// White (HC0) standard errors for a given residual vector.
pub fn hc0_se<T: Scalar>(x: &DesignMatrix<T>, residuals: &[T]) -> Result<Vec<T>, RegressError> {
    check_len(x.n_rows, residuals.len())?;
    let qr = Qr::factor(x)?;
    Ok(robust_se_from(x, &qr, residuals, Covariance::Hc0))
}

/// HC0 standard errors with the `n / (n - k)` small-sample factor.
pub fn hc1_se<T: Scalar>(x: &DesignMatrix<T>, residuals: &[T]) -> Result<Vec<T>, RegressError> {
    check_len(x.n_rows, residuals.len())?;
    let qr = Qr::factor(x)?;
    Ok(robust_se_from(x, &qr, residuals, Covariance::Hc1))
}

/// Ordinary least squares with HC0 standard errors.
pub fn ols<T: Scalar>(x: &DesignMatrix<T>, y: &[T]) -> Result<RegressionResult<T>, RegressError> {
    ols_with(x, y, Covariance::Hc0)
}

pub fn ols_with<T: Scalar>(
    x: &DesignMatrix<T>,
    y: &[T],
    cov: Covariance,
) -> Result<RegressionResult<T>, RegressError> {
    check_len(x.n_rows, y.len())?;
    let qr = Qr::factor(x)?;
    let coefficients = qr.solve(y);
    let fitted = x.mul_vec(&coefficients);
    let residuals: Vec<T> = y.iter().zip(&fitted).map(|(&a, &b)| a - b).collect();
    let robust_se = robust_se_from(x, &qr, &residuals, cov);

    let n = x.n_rows;
    let k = x.n_cols;
    let mean = y.iter().copied().sum::<T>() / T::of_usize(n);
    let sst = y.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean));
    let ssr = dot(&residuals, &residuals);
    let r_squared = if ssr == T::zero() {
        T::one()
    } else if sst == T::zero() {
        T::nan()
    } else {
        T::one() - ssr / sst
    };
    let adj_r_squared = if n > k {
        T::one() - (T::one() - r_squared) * T::of_usize(n - 1) / T::of_usize(n - k)
    } else {
        T::nan()
    };
    Ok(RegressionResult {
        coefficients,
        residuals,
        robust_se,
        r_squared,
        adj_r_squared,
        n_obs: n,
        labels: x.labels.clone(),
        covariance: cov,
    })
}

/// Weighted least squares: OLS on rows scaled by `sqrt(weight)`.
///
/// The returned residuals and fit statistics belong to that scaled system.
pub fn wls<T: Scalar>(
    x: &DesignMatrix<T>,
    y: &[T],
    weights: &[T],
) -> Result<RegressionResult<T>, RegressError> {
    wls_with(x, y, weights, Covariance::Hc0)
}

pub fn wls_with<T: Scalar>(
    x: &DesignMatrix<T>,
    y: &[T],
    weights: &[T],
    cov: Covariance,
) -> Result<RegressionResult<T>, RegressError> {
    check_len(x.n_rows, y.len())?;
    check_len(x.n_rows, weights.len())?;
    if let Some((index, w)) = weights.iter().enumerate().find(|(_, w)| !(**w > T::zero())) {
        return Err(RegressError::NonPositiveWeight {
            index,
            value: w.to_f64().unwrap_or(f64::NAN),
        });
    }
    let roots: Vec<T> = weights.iter().map(|w| w.sqrt()).collect();
    let xs = x.scale_rows(&roots);
    let ys: Vec<T> = y.iter().zip(&roots).map(|(&v, &r)| v * r).collect();
    ols_with(&xs, &ys, cov)
}
