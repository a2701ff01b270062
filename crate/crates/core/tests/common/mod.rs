#![allow(dead_code)]

use nalgebra::DMatrix;
use wavframe_core::linalg::Matrix;
use wavframe_core::rng;

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Descending singular values computed by nalgebra.
pub fn na_singular_values(m: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn gaussian(seed: u64, len: usize) -> Vec<f64> {
    rng::gaussian_vec(&mut rng::seeded(seed), len, 1.0)
}

pub fn gaussian_matrix(seed: u64, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, gaussian(seed, rows * cols)).unwrap()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
