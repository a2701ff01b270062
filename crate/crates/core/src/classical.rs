//! Tight-frame soft-threshold denoising: `f ← μg + (1−μ)WᵀT_λ(Wf)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::framelets::{verify_tight, Frame};
use crate::linalg;

/// Tolerance for accepting an operator as tight (`WᵀW = I`).
pub const TIGHTNESS_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DenoiseConfig {
    pub mu: f64,
    pub lambda: f64,
    pub max_iters: usize,
    pub stop_tol: f64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            mu: 0.1,
            lambda: 0.1,
            max_iters: 200,
            stop_tol: 1e-5,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(invalid!("mu must lie in [0, 1], got {}", self.mu));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid!(
                "threshold must be finite and non-negative, got {}",
                self.lambda
            ));
        }
        if self.max_iters == 0 {
            return Err(invalid!("max_iters must be positive"));
        }
        if !(self.stop_tol > 0.0) {
            return Err(invalid!("stop_tol must be positive"));
        }
        Ok(())
    }
}

pub fn soft_threshold_scalar(x: f64, lambda: f64) -> f64 {
    let mag = libm::fabs(x) - lambda;
    if mag > 0.0 {
        libm::copysign(mag, x)
    } else {
        0.0
    }
}

/// Elementwise `sign(x)·max(|x|−λ, 0)`.
pub fn soft_threshold(x: &[f64], lambda: f64) -> Vec<f64> {
    x.iter()
        .map(|&v| soft_threshold_scalar(v, lambda))
        .collect()
}

/// Undecimated (à trous) Haar frame on circular 1-D signals. Filters
/// `[1, 1]/2` and `[1, −1]/2` at dilation `2^j`; coefficients are the detail
/// bands finest first followed by the final approximation. `WᵀW = I`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UndecimatedHaar {
    len: usize,
    levels: usize,
}

impl UndecimatedHaar {
    pub fn new(len: usize, levels: usize) -> Result<Self> {
        if len == 0 || levels == 0 {
            return Err(invalid!("length and level count must be positive"));
        }
        Ok(Self { len, levels })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    fn check(&self, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(invalid!("expected {want} values, got {got}"));
        }
        Ok(())
    }
}

impl Frame for UndecimatedHaar {
    fn signal_len(&self) -> usize {
        self.len
    }

    fn coeff_len(&self) -> usize {
        (self.levels + 1) * self.len
    }

    fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>> {
        self.check(signal.len(), self.len)?;
        let n = self.len;
        let mut out = Vec::with_capacity(self.coeff_len());
        let mut approx = signal.to_vec();
        for j in 0..self.levels {
            let step = (1usize << j) % n;
            let mut next = vec![0.0; n];
            for i in 0..n {
                let (a, b) = (approx[i], approx[(i + step) % n]);
                out.push(0.5 * (a - b));
                next[i] = 0.5 * (a + b);
            }
            approx = next;
        }
        out.extend_from_slice(&approx);
        Ok(out)
    }

    fn adjoint(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check(coeffs.len(), self.coeff_len())?;
        let n = self.len;
        let mut approx = coeffs[self.levels * n..].to_vec();
        for j in (0..self.levels).rev() {
            let step = (1usize << j) % n;
            let detail = &coeffs[j * n..(j + 1) * n];
            let mut prev = vec![0.0; n];
            for i in 0..n {
                let k = (i + step) % n;
                prev[i] += 0.5 * (approx[i] + detail[i]);
                prev[k] += 0.5 * (approx[i] - detail[i]);
            }
            approx = prev;
        }
        Ok(approx)
    }

    fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.adjoint(coeffs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutcome {
    pub estimate: Vec<f64>,
    /// Cost `μ/2‖g−f‖² + (1−μ)/2 (‖Wf−α‖² + λ‖α‖₁)` after each update, with
    /// `α` the thresholded coefficients used in that update.
    pub objective: Vec<f64>,
    /// `‖f_{n+1} − f_n‖ / ‖f_n‖` per iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl DenoiseOutcome {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }
}

/// Picard iteration of the soft-threshold update. Every coefficient,
/// including the coarse approximation, is thresholded. Operators that are
/// not tight are refused.
pub fn frame_denoise<F: Frame + ?Sized>(
    g: &[f64],
    op: &F,
    cfg: &DenoiseConfig,
) -> Result<DenoiseOutcome> {
    cfg.validate()?;
    if g.len() != op.signal_len() {
        return Err(invalid!(
            "signal has {} samples, frame expects {}",
            g.len(),
            op.signal_len()
        ));
    }
    let report = verify_tight(op, TIGHTNESS_TOLERANCE)?;
    if !report.passed {
        return Err(Error::NotTight(alloc::format!(
            "WᵀW deviates from the identity by {:e}",
            report.max_residual
        )));
    }
    let (mu, lambda) = (cfg.mu, cfg.lambda);
    let mut f = g.to_vec();
    let mut objective = Vec::new();
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let alpha = soft_threshold(&op.analyze(&f)?, lambda);
        let back = op.adjoint(&alpha)?;
        let next: Vec<f64> = g
            .iter()
            .zip(&back)
            .map(|(gi, bi)| mu * gi + (1.0 - mu) * bi)
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure("non-finite iterate".into()));
        }
        let step = linalg::norm(&sub(&next, &f));
        let base = linalg::norm(&f);
        let rel = if base > 0.0 { step / base } else { step };
        f = next;
        objective.push(cost(g, &f, &alpha, op, mu, lambda)?);
        residuals.push(rel);
        if rel < cfg.stop_tol {
            converged = true;
            break;
        }
    }
    Ok(DenoiseOutcome {
        estimate: f,
        objective,
        residuals,
        converged,
    })
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn cost<F: Frame + ?Sized>(
    g: &[f64],
    f: &[f64],
    alpha: &[f64],
    op: &F,
    mu: f64,
    lambda: f64,
) -> Result<f64> {
    let fit = linalg::norm(&sub(g, f));
    let wf = op.analyze(f)?;
    let gap = linalg::norm(&sub(&wf, alpha));
    let l1: f64 = alpha.iter().map(|a| libm::fabs(*a)).sum();
    Ok(0.5 * mu * fit * fit + 0.5 * (1.0 - mu) * (gap * gap + lambda * l1))
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    s / a.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best_lambda: f64,
    pub best_mse: f64,
    /// `(λ, MSE)` for every candidate, in the order given.
    pub table: Vec<(f64, f64)>,
}

/// Picks the threshold minimising the MSE against a known clean signal.
pub fn grid_search_lambda<F: Frame + ?Sized>(
    g: &[f64],
    clean: &[f64],
    op: &F,
    base: &DenoiseConfig,
    candidates: &[f64],
) -> Result<GridSearchResult> {
    if candidates.is_empty() {
        return Err(invalid!("no threshold candidates"));
    }
    if clean.len() != g.len() {
        return Err(invalid!("clean reference length does not match the signal"));
    }
    let mut table = Vec::with_capacity(candidates.len());
    for &lambda in candidates {
        let cfg = DenoiseConfig { lambda, ..*base };
        let out = frame_denoise(g, op, &cfg)?;
        table.push((lambda, mse(&out.estimate, clean)));
    }
    let (best_lambda, best_mse) =
        table
            .iter()
            .copied()
            .fold((f64::NAN, f64::INFINITY), |acc, (l, m)| {
                if m < acc.1 {
                    (l, m)
                } else {
                    acc
                }
            });
    Ok(GridSearchResult {
        best_lambda,
        best_mse,
        table,
    })
}
