//! Wrap-around Hankel matrices and the circular convolutions they encode.
//!
//! Filters are passed unflipped. `siso_conv(f, ψ)` evaluates the convolution
//! of `f` with the flipped filter `ψ̄`, aligned so that output sample `i`
//! equals row `i` of `H_d(f)` times `ψ`:
//!
//! ```text
//! y[i] = Σ_t ψ[t] · f[(i + t) mod n]
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::linalg::{self, Matrix};

/// `H_d(f)`: row `i` is the circular window `f[i], …, f[i+d-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    window: usize,
    matrix: Matrix,
}

impl HankelMatrix {
    pub fn source_len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }
}

/// `H_{d|p}(F) = [H_d(f_1) … H_d(f_p)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedHankelMatrix {
    window: usize,
    channel_count: usize,
    matrix: Matrix,
}

impl ExtendedHankelMatrix {
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }
}

/// Multi-input multi-output 1-D filter set laid out as the `dp×q` matrix
/// whose block `j` (rows `j·d .. (j+1)·d`) holds the filters applied to
/// input channel `j`, one column per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    taps: usize,
    in_channels: usize,
    out_channels: usize,
    coefficients: Matrix,
}

impl FilterBank {
    pub fn new(
        taps: usize,
        in_channels: usize,
        out_channels: usize,
        coefficients: Matrix,
    ) -> Result<Self> {
        if taps == 0 || in_channels == 0 || out_channels == 0 {
            return Err(invalid!("filter bank dimensions must be positive"));
        }
        if coefficients.rows() != taps * in_channels || coefficients.cols() != out_channels {
            return Err(invalid!(
                "coefficient matrix is {}x{}, expected {}x{}",
                coefficients.rows(),
                coefficients.cols(),
                taps * in_channels,
                out_channels
            ));
        }
        if coefficients.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(invalid!("filter coefficients must be finite"));
        }
        Ok(Self {
            taps,
            in_channels,
            out_channels,
            coefficients,
        })
    }

    /// Single-input single-output bank holding one filter.
    pub fn siso(psi: &[f64]) -> Result<Self> {
        Self::new(
            psi.len(),
            1,
            1,
            Matrix::from_vec(psi.len(), 1, psi.to_vec())?,
        )
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn coefficients(&self) -> &Matrix {
        &self.coefficients
    }

    /// Taps of the filter from input channel `input` to output channel `output`.
    pub fn filter(&self, input: usize, output: usize) -> Vec<f64> {
        (0..self.taps)
            .map(|t| self.coefficients.get(input * self.taps + t, output))
            .collect()
    }
}

pub fn build_hankel(f: &[f64], window: usize) -> Result<HankelMatrix> {
    let n = f.len();
    if window == 0 || window > n {
        return Err(invalid!("Hankel window {window} must lie in 1..={n}"));
    }
    let matrix = Matrix::from_fn(n, window, |i, j| f[(i + j) % n]);
    Ok(HankelMatrix { window, matrix })
}

/// Extended Hankel matrix of the columns of `channels` (an `n×p` matrix).
pub fn build_extended_hankel(channels: &Matrix, window: usize) -> Result<ExtendedHankelMatrix> {
    let (n, p) = (channels.rows(), channels.cols());
    if p == 0 {
        return Err(invalid!(
            "extended Hankel matrix needs at least one channel"
        ));
    }
    if window == 0 || window > n {
        return Err(invalid!("Hankel window {window} must lie in 1..={n}"));
    }
    let matrix = Matrix::from_fn(n, window * p, |i, col| {
        let (ch, t) = (col / window, col % window);
        channels.get((i + t) % n, ch)
    });
    Ok(ExtendedHankelMatrix {
        window,
        channel_count: p,
        matrix,
    })
}

/// Adjoint of `f ↦ H_{d|p}(f)`: folds an `n×dp` matrix back onto `p`
/// channels by summing along anti-diagonals. `H*(H(F)) = d·F`.
pub fn hankel_adjoint(m: &Matrix, window: usize, channels: usize) -> Result<Matrix> {
    let n = m.rows();
    if m.cols() != window * channels {
        return Err(invalid!(
            "matrix has {} columns, expected {}",
            m.cols(),
            window * channels
        ));
    }
    let mut out = Matrix::zeros(n, channels);
    for i in 0..n {
        for ch in 0..channels {
            for t in 0..window {
                let k = (i + t) % n;
                let v = out.get(k, ch) + m.get(i, ch * window + t);
                out.set(k, ch, v);
            }
        }
    }
    Ok(out)
}

/// Single-input single-output circular convolution `f ⊛ ψ̄`.
pub fn siso_conv(f: &[f64], psi: &[f64]) -> Result<Vec<f64>> {
    let n = f.len();
    let d = psi.len();
    if d == 0 || d > n {
        return Err(invalid!("filter length {d} must lie in 1..={n}"));
    }
    // ψ̄[k] = ψ[d-1-k]; (f ⊛ ψ̄)[m] = Σ_k ψ̄[k] f[m-k], read at m = i + d - 1.
    let mut y = vec![0.0; n];
    for (i, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..d {
            let flipped = psi[d - 1 - k];
            let idx = (i + d - 1 + n - k) % n;
            acc += flipped * f[idx];
        }
        *out = acc;
    }
    Ok(y)
}

/// Plain circular convolution `(a ⊛ h)[k] = Σ_t h[t] a[k - t]`.
pub fn circular_conv(a: &[f64], h: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n];
    for (k, o) in out.iter_mut().enumerate() {
        *o = h
            .iter()
            .enumerate()
            .map(|(t, &ht)| ht * a[(k + n * h.len() - t) % n])
            .sum();
    }
    out
}

/// Multi-channel circular convolution `F ⊛ Ψ̄`. `channels` is `n×p`; the
/// result is `n×q`. Evaluated channel by channel with [`siso_conv`].
pub fn mimo_conv(channels: &Matrix, bank: &FilterBank) -> Result<Matrix> {
    if channels.cols() != bank.in_channels {
        return Err(invalid!(
            "input has {} channels but the filter bank expects {}",
            channels.cols(),
            bank.in_channels
        ));
    }
    let n = channels.rows();
    let mut out = Matrix::zeros(n, bank.out_channels);
    for j in 0..bank.in_channels {
        let f = channels.column(j);
        for o in 0..bank.out_channels {
            let y = siso_conv(&f, &bank.filter(j, o))?;
            for (i, v) in y.into_iter().enumerate() {
                out.set(i, o, out.get(i, o) + v);
            }
        }
    }
    Ok(out)
}

/// Descending singular values of an extended Hankel matrix.
pub fn hankel_spectrum(h: &ExtendedHankelMatrix) -> Result<Vec<f64>> {
    linalg::singular_values(&h.matrix)
}

/// 2-D multi-channel filter set, coefficients indexed `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank2d {
    kernel: (usize, usize),
    in_channels: usize,
    out_channels: usize,
    coefficients: Vec<f64>,
}

impl FilterBank2d {
    pub fn new(
        kernel: (usize, usize),
        in_channels: usize,
        out_channels: usize,
        coefficients: Vec<f64>,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(invalid!("kernel dimensions must be odd, got {kh}x{kw}"));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(invalid!("channel counts must be positive"));
        }
        if coefficients.len() != out_channels * in_channels * kh * kw {
            return Err(invalid!(
                "coefficient count {} does not match the declared shape",
                coefficients.len()
            ));
        }
        if coefficients.iter().any(|x| !x.is_finite()) {
            return Err(invalid!("filter coefficients must be finite"));
        }
        Ok(Self {
            kernel,
            in_channels,
            out_channels,
            coefficients,
        })
    }

    pub fn kernel(&self) -> (usize, usize) {
        self.kernel
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    #[inline]
    pub fn get(&self, out: usize, input: usize, ky: usize, kx: usize) -> f64 {
        let (kh, kw) = self.kernel;
        self.coefficients[((out * self.in_channels + input) * kh + ky) * kw + kx]
    }
}

/// Circular multi-channel 2-D convolution with centred kernels:
///
/// ```text
/// y_o[r, c] = Σ_i Σ_{a,b} k[o][i][a][b] · x_i[r + a - kh/2, c + b - kw/2]
/// ```
pub fn conv2d(input: &[Image], bank: &FilterBank2d) -> Result<Vec<Image>> {
    if input.len() != bank.in_channels {
        return Err(invalid!(
            "input has {} channels, bank expects {}",
            input.len(),
            bank.in_channels
        ));
    }
    let (h, w) = input[0].dims();
    if input.iter().any(|x| x.dims() != (h, w)) {
        return Err(invalid!("input channels differ in size"));
    }
    let (kh, kw) = bank.kernel;
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = Vec::with_capacity(bank.out_channels);
    for o in 0..bank.out_channels {
        let mut acc = Image::zeros(h, w);
        for (i, x) in input.iter().enumerate() {
            for a in 0..kh {
                for b in 0..kw {
                    let k = bank.get(o, i, a, b);
                    if k == 0.0 {
                        continue;
                    }
                    for r in 0..h {
                        for c in 0..w {
                            let v = x.get_wrapped(
                                r as isize + a as isize - ch,
                                c as isize + b as isize - cw,
                            );
                            let idx = r * w + c;
                            acc.data_mut()[idx] += k * v;
                        }
                    }
                }
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// 2-D lifting of the extended Hankel matrix for multi-channel images: one
/// row per pixel, one column per (channel, window offset). Windows start at
/// the pixel itself and wrap circularly.
pub fn build_extended_hankel_2d(
    channels: &[Image],
    window: (usize, usize),
) -> Result<ExtendedHankelMatrix> {
    let Some(first) = channels.first() else {
        return Err(invalid!(
            "extended Hankel matrix needs at least one channel"
        ));
    };
    let (h, w) = first.dims();
    let (wh, ww) = window;
    if wh == 0 || ww == 0 || wh > h || ww > w {
        return Err(invalid!("window {wh}x{ww} does not fit a {h}x{w} image"));
    }
    if channels.iter().any(|c| c.dims() != (h, w)) {
        return Err(invalid!("channels differ in size"));
    }
    let per = wh * ww;
    let matrix = Matrix::from_fn(h * w, per * channels.len(), |row, col| {
        let (r, c) = (row / w, row % w);
        let (ch, off) = (col / per, col % per);
        let (a, b) = (off / ww, off % ww);
        channels[ch].get((r + a) % h, (c + b) % w)
    });
    Ok(ExtendedHankelMatrix {
        window: per,
        channel_count: channels.len(),
        matrix,
    })
}
