//! Small dense linear algebra: a row-major matrix, one-sided Jacobi SVD and a
//! pivoted Gauss-Jordan inverse. Sized for desk-scale problems (a few thousand
//! rows, a few hundred columns).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, numeric, Result};

/// Relative singular-value threshold below which a direction counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-8;

const JACOBI_MAX_SWEEPS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(invalid!("columns have differing lengths"));
        }
        Ok(Self::from_fn(rows, cols, |i, j| columns[j][i]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(invalid!(
                "cannot multiply {}x{} by {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(invalid!(
                "vector length {} does not match {} columns",
                v.len(),
                self.cols
            ));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ v` without materializing the transpose.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(invalid!(
                "vector length {} does not match {} rows",
                v.len(),
                self.rows
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            axpy(vi, self.row(i), &mut out);
        }
        Ok(out)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(invalid!("shape mismatch in subtraction"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(libm::fabs(*x)))
    }

    /// Horizontal concatenation `[self other]`.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(invalid!("row mismatch in hstack"));
        }
        Ok(Self::from_fn(self.rows, self.cols + other.cols, |i, j| {
            if j < self.cols {
                self.get(i, j)
            } else {
                other.get(i, j - self.cols)
            }
        }))
    }

    /// Columns `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> Self {
        Self::from_fn(self.rows, end - start, |i, j| self.get(i, start + j))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| m.max(libm::fabs(x - y)))
}

/// Thin singular value decomposition `A = U diag(σ) Vᵀ` with σ non-increasing.
///
/// For an `m×n` input, `u` is `m×k` and `v` is `n×k` with `k = min(m, n)`.
/// Columns of `u` paired with a zero singular value are left at zero.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    /// Number of singular values above `RANK_TOLERANCE` relative to the largest.
    pub fn numerical_rank(&self) -> usize {
        numerical_rank(&self.singular_values)
    }
}

pub fn numerical_rank(singular_values: &[f64]) -> usize {
    let Some(&top) = singular_values.first() else {
        return 0;
    };
    if top == 0.0 {
        return 0;
    }
    singular_values
        .iter()
        .filter(|&&s| s / top >= RANK_TOLERANCE)
        .count()
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if a.data.iter().any(|x| !x.is_finite()) {
        return Err(numeric!("SVD input contains non-finite entries"));
    }
    if a.rows < a.cols {
        let t = svd(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    let (m, n) = (a.rows, a.cols);
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // Columns this small are rounding noise of a rank-deficient input;
    // rotating them against each other never settles.
    let negligible =
        f64::EPSILON * f64::EPSILON * m as f64 * a.data.iter().map(|x| x * x).sum::<f64>();
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        alpha += cp[i] * cp[i];
                        beta += cq[i] * cq[i];
                        gamma += cp[i] * cq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0
                    || alpha <= negligible
                    || beta <= negligible
                    || libm::fabs(gamma) <= 1e-15 * libm::sqrt(alpha * beta)
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t =
                    libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut vcols, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(numeric!(
            "Jacobi SVD did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        ));
    }

    let mut order: Vec<(f64, usize)> = cols.iter().enumerate().map(|(j, c)| (norm(c), j)).collect();
    order.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(core::cmp::Ordering::Equal));

    let singular_values: Vec<f64> = order.iter().map(|&(s, _)| s).collect();
    let u_cols: Vec<Vec<f64>> = order
        .iter()
        .map(|&(s, j)| {
            if s > 0.0 {
                cols[j].iter().map(|x| x / s).collect()
            } else {
                vec![0.0; m]
            }
        })
        .collect();
    let v_cols: Vec<Vec<f64>> = order.iter().map(|&(_, j)| vcols[j].clone()).collect();
    Ok(Svd {
        u: Matrix::from_columns(&u_cols)?,
        singular_values,
        v: Matrix::from_columns(&v_cols)?,
    })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Singular values only, non-increasing.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    Ok(svd(a)?.singular_values)
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn inverse(a: &Matrix) -> Result<Matrix> {
    if a.rows != a.cols {
        return Err(invalid!("cannot invert a {}x{} matrix", a.rows, a.cols));
    }
    let n = a.rows;
    let mut work = a.clone();
    let mut inv = Matrix::identity(n);
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| {
                libm::fabs(work.get(x, col))
                    .partial_cmp(&libm::fabs(work.get(y, col)))
                    .unwrap_or(core::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        let pv = work.get(pivot, col);
        if libm::fabs(pv) <= 1e-14 * scale {
            return Err(numeric!("matrix is singular to working precision"));
        }
        if pivot != col {
            swap_rows(&mut work, pivot, col);
            swap_rows(&mut inv, pivot, col);
        }
        let r = 1.0 / pv;
        for j in 0..n {
            work.data[col * n + j] *= r;
            inv.data[col * n + j] *= r;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = work.get(i, col);
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                work.data[i * n + j] -= f * work.data[col * n + j];
                inv.data[i * n + j] -= f * inv.data[col * n + j];
            }
        }
    }
    Ok(inv)
}

fn swap_rows(m: &mut Matrix, a: usize, b: usize) {
    let n = m.cols;
    for j in 0..n {
        m.data.swap(a * n + j, b * n + j);
    }
}

/// Modified Gram-Schmidt over a list of vectors; drops (near-)dependent ones.
pub fn orthonormalize(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for b in &basis {
            let proj = dot(&w, b);
            axpy(-proj, b, &mut w);
        }
        let nrm = norm(&w);
        if nrm > 1e-12 * norm(v).max(f64::MIN_POSITIVE) {
            w.iter_mut().for_each(|x| *x /= nrm);
            basis.push(w);
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut state = seed;
        Matrix::from_fn(rows, cols, |_, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn svd_reconstructs_tall_and_wide() {
        for &(m, n) in &[(7, 4), (4, 7), (5, 5), (1, 3)] {
            let a = lcg_matrix(m, n, 42 + m as u64);
            let s = svd(&a).unwrap();
            let k = m.min(n);
            let sigma =
                Matrix::from_fn(k, k, |i, j| if i == j { s.singular_values[i] } else { 0.0 });
            let back =
                s.u.matmul(&sigma)
                    .unwrap()
                    .matmul(&s.v.transpose())
                    .unwrap();
            assert!(back.sub(&a).unwrap().max_abs() < 1e-12);
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_input_converges() {
        // Rank 2: every column is a combination of two vectors.
        let a = Matrix::from_fn(40, 8, |i, j| {
            ((i + j) as f64 * 0.7).cos() + 0.5 * ((i + j) as f64 * 0.7).sin()
        });
        let s = svd(&a).unwrap();
        assert!(s.singular_values[2] < 1e-12 * s.singular_values[0]);
    }

    #[test]
    fn zero_matrix_has_zero_spectrum() {
        let s = singular_values(&Matrix::zeros(6, 3)).unwrap();
        assert_eq!(s, vec![0.0; 3]);
    }

    #[test]
    fn inverse_of_singular_matrix_fails() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(inverse(&a), Err(crate::Error::NumericFailure(_))));
    }

    #[test]
    fn inverse_round_trip() {
        let a = lcg_matrix(6, 6, 9);
        let inv = inverse(&a).unwrap();
        let id = a.matmul(&inv).unwrap();
        assert!(id.sub(&Matrix::identity(6)).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let a = Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(svd(&a).is_err());
    }
}
