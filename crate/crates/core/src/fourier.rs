//! Discrete Fourier transforms on circular 1-D and 2-D grids.
//!
//! Power-of-two lengths use an iterative radix-2 FFT; other lengths fall back
//! to a direct O(n²) DFT with a precomputed twiddle table.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

pub use num_complex::Complex64;

/// In-place 1-D DFT. `inverse` applies the conjugate kernel and the `1/n` scale.
pub fn dft_in_place(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_radix2(data, inverse);
    } else {
        let out = dft_direct(data, inverse);
        data.copy_from_slice(&out);
    }
    if inverse {
        let scale = 1.0 / n as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }
}

fn twiddle(k: usize, n: usize, inverse: bool) -> Complex64 {
    let sign = if inverse { 1.0 } else { -1.0 };
    let angle = sign * 2.0 * PI * k as f64 / n as f64;
    Complex64::new(libm::cos(angle), libm::sin(angle))
}

fn dft_direct(data: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = data.len();
    let table: Vec<Complex64> = (0..n).map(|k| twiddle(k, n, inverse)).collect();
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, x) in data.iter().enumerate() {
                acc += x * table[(j * k) % n];
            }
            acc
        })
        .collect()
}

fn fft_radix2(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let table: Vec<Complex64> = (0..n / 2).map(|k| twiddle(k, n, inverse)).collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = table[k * stride];
                let a = data[start + k];
                let b = data[start + k + half] * w;
                data[start + k] = a + b;
                data[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// 2-D DFT of a row-major `height×width` grid.
pub fn dft2(data: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    debug_assert_eq!(data.len(), height * width);
    for row in data.chunks_exact_mut(width) {
        dft_in_place(row, inverse);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        dft_in_place(&mut column, inverse);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }
}

pub fn forward_real(data: &[f64], height: usize, width: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    dft2(&mut buf, height, width, false);
    buf
}

/// Inverse 2-D DFT keeping the real part.
pub fn inverse_real(mut spectrum: Vec<Complex64>, height: usize, width: usize) -> Vec<f64> {
    dft2(&mut spectrum, height, width, true);
    spectrum.into_iter().map(|z| z.re).collect()
}
