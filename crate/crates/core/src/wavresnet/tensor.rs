//! Batched feature maps and the three layer kinds of the network, each with
//! an explicit backward pass. Convolutions are circular (wrap-around) 2-D
//! cross-correlations with odd square kernels centred on the output pixel.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// Dense `n × c × h × w` array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(invalid!(
                "tensor {n}x{c}x{h}x{w} needs {} values, got {}",
                n * c * h * w,
                data.len()
            ));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self, b: usize, ch: usize) -> &[f64] {
        let p = self.plane_len();
        let start = (b * self.c + ch) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, b: usize, ch: usize) -> &mut [f64] {
        let p = self.plane_len();
        let start = (b * self.c + ch) * p;
        &mut self.data[start..start + p]
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let s = self.sample_len();
        &self.data[b * s..(b + 1) * s]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.n, self.c, self.h, self.w) == (other.n, other.c, other.h, other.w)
    }

    /// Stacks tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Self {
        let first = parts[0];
        let c: usize = parts.iter().map(|t| t.c).sum();
        let mut out = Tensor::zeros(first.n, c, first.h, first.w);
        for b in 0..first.n {
            let mut offset = 0;
            for t in parts {
                let len = t.sample_len();
                let dst = b * out.sample_len() + offset;
                out.data[dst..dst + len].copy_from_slice(t.sample(b));
                offset += len;
            }
        }
        out
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, counts: &[usize]) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = counts
            .iter()
            .map(|&c| Tensor::zeros(self.n, c, self.h, self.w))
            .collect();
        for b in 0..self.n {
            let mut offset = b * self.sample_len();
            for t in out.iter_mut() {
                let len = t.sample_len();
                t.data[b * len..(b + 1) * len].copy_from_slice(&self.data[offset..offset + len]);
                offset += len;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Copies a plane into `buf` with `r` wrapped rows/columns on every side.
fn pad_circular(plane: &[f64], h: usize, w: usize, r: usize, buf: &mut [f64]) {
    let pw = w + 2 * r;
    for yy in 0..h + 2 * r {
        let src = ((yy + h - r % h) % h) * w;
        let row = &mut buf[yy * pw..(yy + 1) * pw];
        for (xx, v) in row.iter_mut().enumerate() {
            *v = plane[src + (xx + w - r % w) % w];
        }
    }
}

#[inline]
fn axpy_row(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

#[inline]
fn dot_row(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Shape of a convolution: weights are `[out][in][k][k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    #[cfg(test)]
    fn index(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.cin + ci) * self.k + ky) * self.k + kx
    }
}

/// Unrolls one sample into a `(cin·k·k) × (h·w)` matrix whose row
/// `(ci, ky, kx)` holds the input shifted by `(ky − r, kx − r)`.
fn im2col(x: &Tensor, b: usize, k: usize, buf: &mut [f64], col: &mut [f64]) {
    let (h, w) = (x.h, x.w);
    let r = k / 2;
    let pw = w + 2 * r;
    let hw = h * w;
    for ci in 0..x.c {
        pad_circular(x.plane(b, ci), h, w, r, buf);
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    row[y * w..(y + 1) * w]
                        .copy_from_slice(&buf[(y + ky) * pw + kx..(y + ky) * pw + kx + w]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds a column matrix back onto the sample planes.
fn col2im(col: &[f64], k: usize, out: &mut Tensor, b: usize) {
    let (h, w) = (out.h, out.w);
    let r = k / 2;
    let hw = h * w;
    for ci in 0..out.c {
        let plane = out.plane_mut(b, ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let dst_row = ((y + ky + h - r % h) % h) * w;
                    let shift = (kx + w - r % w) % w;
                    let src = &row[y * w..(y + 1) * w];
                    // destination column (x + kx − r) mod w, split at the wrap
                    let split = w - shift;
                    axpy_row(&mut plane[dst_row + shift..dst_row + w], 1.0, &src[..split]);
                    axpy_row(&mut plane[dst_row..dst_row + shift], 1.0, &src[split..]);
                }
            }
        }
    }
}

/// `C = A·B + beta·C` for row-major blocks given by their strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides address only elements inside `a`, `b` and `c`,
    // whose lengths are checked above, and `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[co](y, x) = b[co] + Σ w[co][ci][ky][kx] · in[ci](y+ky−r, x+kx−r)`.
pub fn conv_forward(x: &Tensor, shape: ConvShape, weight: &[f64], bias: Option<&[f64]>) -> Tensor {
    debug_assert_eq!(x.c, shape.cin);
    let (h, w, k) = (x.h, x.w, shape.k);
    let r = k / 2;
    let hw = h * w;
    let kk = shape.cin * k * k;
    let mut buf = vec![0.0; (h + 2 * r) * (w + 2 * r)];
    let mut col = vec![0.0; kk * hw];
    let mut out = Tensor::zeros(x.n, shape.cout, h, w);
    let sample = shape.cout * hw;
    for b in 0..x.n {
        im2col(x, b, k, &mut buf, &mut col);
        let dst = &mut out.data[b * sample..(b + 1) * sample];
        gemm(
            shape.cout,
            kk,
            hw,
            weight,
            (kk as isize, 1),
            &col,
            (hw as isize, 1),
            0.0,
            dst,
        );
        if let Some(bias) = bias {
            for co in 0..shape.cout {
                let bc = bias[co];
                dst[co * hw..(co + 1) * hw]
                    .iter_mut()
                    .for_each(|v| *v += bc);
            }
        }
    }
    out
}

/// Gradients of a convolution. The input gradient is skipped when
/// `need_input` is false (first layer).
pub fn conv_backward(
    x: &Tensor,
    shape: ConvShape,
    weight: &[f64],
    grad_out: &Tensor,
    grad_weight: &mut [f64],
    grad_bias: Option<&mut [f64]>,
    need_input: bool,
) -> Option<Tensor> {
    let (h, w, k) = (x.h, x.w, shape.k);
    let r = k / 2;
    let hw = h * w;
    let kk = shape.cin * k * k;
    let mut buf = vec![0.0; (h + 2 * r) * (w + 2 * r)];
    let mut col = vec![0.0; kk * hw];
    let sample = shape.cout * hw;
    let mut grad_in = if need_input {
        Some(Tensor::zeros(x.n, shape.cin, h, w))
    } else {
        None
    };
    for b in 0..x.n {
        let g = &grad_out.data[b * sample..(b + 1) * sample];
        im2col(x, b, k, &mut buf, &mut col);
        gemm(
            shape.cout,
            hw,
            kk,
            g,
            (hw as isize, 1),
            &col,
            (1, hw as isize),
            1.0,
            grad_weight,
        );
        if let Some(gi) = grad_in.as_mut() {
            gemm(
                kk,
                shape.cout,
                hw,
                weight,
                (1, kk as isize),
                g,
                (hw as isize, 1),
                0.0,
                &mut col,
            );
            col2im(&col, k, gi, b);
        }
    }
    if let Some(gb) = grad_bias {
        for b in 0..x.n {
            for (co, slot) in gb.iter_mut().enumerate() {
                *slot += grad_out.plane(b, co).iter().sum::<f64>();
            }
        }
    }
    grad_in
}

pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Saved state of a batch-normalization forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Normalizes each channel over batch and space. In training mode the batch
/// statistics are used; otherwise `running = (mean, var)`.
pub fn bn_forward(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running: Option<(&[f64], &[f64])>,
) -> (Tensor, BnCache) {
    let count = (x.n * x.plane_len()) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    match running {
        Some((m, v)) => {
            mean.copy_from_slice(m);
            var.copy_from_slice(v);
        }
        None => {
            for ch in 0..x.c {
                let mut s = 0.0;
                for b in 0..x.n {
                    s += x.plane(b, ch).iter().sum::<f64>();
                }
                let mu = s / count;
                let mut ss = 0.0;
                for b in 0..x.n {
                    ss += x
                        .plane(b, ch)
                        .iter()
                        .map(|v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = ss / count;
            }
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
    let mut xhat = x.clone();
    let mut y = x.clone();
    for b in 0..x.n {
        for ch in 0..x.c {
            let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            let xh = xhat.plane_mut(b, ch);
            for v in xh.iter_mut() {
                *v = (*v - mu) * is;
            }
            let xh = xhat.plane(b, ch).to_vec();
            for (o, v) in y.plane_mut(b, ch).iter_mut().zip(&xh) {
                *o = g * v + bt;
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    )
}

/// Backward pass of a training-mode normalization.
pub fn bn_backward(
    cache: &BnCache,
    gamma: &[f64],
    grad_out: &Tensor,
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Tensor {
    let xhat = &cache.xhat;
    let count = (xhat.n * xhat.plane_len()) as f64;
    let mut grad_in = Tensor::zeros(xhat.n, xhat.c, xhat.h, xhat.w);
    for ch in 0..xhat.c {
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for b in 0..xhat.n {
            let g = grad_out.plane(b, ch);
            sum_g += g.iter().sum::<f64>();
            sum_gx += dot_row(g, xhat.plane(b, ch));
        }
        grad_gamma[ch] += sum_gx;
        grad_beta[ch] += sum_g;
        let scale = gamma[ch] * cache.inv_std[ch] / count;
        for b in 0..xhat.n {
            let g = grad_out.plane(b, ch).to_vec();
            let xh = xhat.plane(b, ch).to_vec();
            for ((o, gi), xi) in grad_in.plane_mut(b, ch).iter_mut().zip(&g).zip(&xh) {
                *o = scale * (count * gi - sum_g - xi * sum_gx);
            }
        }
    }
    grad_in
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        n: x.n,
        c: x.c,
        h: x.h,
        w: x.w,
    }
}

/// Gradient through a ReLU whose output was `out`.
pub fn relu_backward(out: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = out
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
        .collect();
    Tensor {
        data,
        n: out.n,
        c: out.c,
        h: out.h,
        w: out.w,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn direct_conv(x: &Tensor, shape: ConvShape, weight: &[f64]) -> Tensor {
        let r = (shape.k / 2) as isize;
        let mut out = Tensor::zeros(x.n, shape.cout, x.h, x.w);
        for b in 0..x.n {
            for co in 0..shape.cout {
                for y in 0..x.h {
                    for xx in 0..x.w {
                        let mut acc = 0.0;
                        for ci in 0..shape.cin {
                            for ky in 0..shape.k {
                                for kx in 0..shape.k {
                                    let sy = (y as isize + ky as isize - r).rem_euclid(x.h as isize)
                                        as usize;
                                    let sx = (xx as isize + kx as isize - r)
                                        .rem_euclid(x.w as isize)
                                        as usize;
                                    acc += weight[shape.index(co, ci, ky, kx)]
                                        * x.plane(b, ci)[sy * x.w + sx];
                                }
                            }
                        }
                        out.plane_mut(b, co)[y * x.w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn gemm_convolution_matches_direct_loops() {
        let mut rng = rng::seeded(9);
        for &(k, h, w) in &[(3, 5, 7), (5, 6, 6), (1, 4, 3)] {
            let shape = ConvShape { cin: 3, cout: 2, k };
            let x =
                Tensor::from_vec(2, 3, h, w, rng::gaussian_vec(&mut rng, 6 * h * w, 1.0)).unwrap();
            let wt = rng::gaussian_vec(&mut rng, shape.weight_len(), 1.0);
            let fast = conv_forward(&x, shape, &wt, None);
            let slow = direct_conv(&x, shape, &wt);
            assert!(crate::linalg::max_abs_diff(&fast.data, &slow.data) < 1e-12);
        }
    }

    #[test]
    fn input_gradient_is_the_adjoint() {
        // <conv(x), g> = <x, convᵀ(g)>
        let mut rng = rng::seeded(4);
        let shape = ConvShape {
            cin: 2,
            cout: 3,
            k: 3,
        };
        let x = Tensor::from_vec(1, 2, 5, 6, rng::gaussian_vec(&mut rng, 60, 1.0)).unwrap();
        let g = Tensor::from_vec(1, 3, 5, 6, rng::gaussian_vec(&mut rng, 90, 1.0)).unwrap();
        let wt = rng::gaussian_vec(&mut rng, shape.weight_len(), 1.0);
        let y = conv_forward(&x, shape, &wt, None);
        let mut gw = vec![0.0; shape.weight_len()];
        let gx = conv_backward(&x, shape, &wt, &g, &mut gw, None, true).unwrap();
        let lhs = crate::linalg::dot(&y.data, &g.data);
        let rhs = crate::linalg::dot(&x.data, &gx.data);
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
