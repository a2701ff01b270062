//! Relaxed fixed-point iteration around an image denoiser `Q`:
//!
//! ```text
//! q_n     = Q(f_n)
//! f̄_{n+1} = μ g + (1 − μ) q_n
//! f_{n+1} = f_n + λ_n (f̄_{n+1} − f_n)
//! ```
//!
//! starting from `f₀ = f₁ = g`. With `μ = 0` and `λ = 1` one iteration is the
//! plain feed-forward denoiser.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, numeric, Result};
use crate::image::Image;
use crate::linalg::{self, Matrix};
use crate::metrics;
use crate::rng;

/// An image-to-image map.
pub trait Denoiser {
    fn denoise(&self, f: &Image) -> Result<Image>;
}

impl<F> Denoiser for F
where
    F: Fn(&Image) -> Result<Image>,
{
    fn denoise(&self, f: &Image) -> Result<Image> {
        self(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Relaxation {
    /// Constant `λ ∈ (0, 1)`.
    Constant(f64),
    /// Explicit `λ_n`, each in `(0, 1)`; the last value repeats.
    Schedule(Vec<f64>),
    /// `λ_n = 1`: the unrelaxed (Picard) iteration. Convergence then rests on
    /// `Q` being a contraction rather than on the averaging argument.
    Unrelaxed,
}

impl Relaxation {
    fn validate(&self) -> Result<()> {
        let ok = |l: f64| l > 0.0 && l < 1.0;
        match self {
            Relaxation::Constant(l) if !ok(*l) => Err(invalid!("relaxation {l} is outside (0, 1)")),
            Relaxation::Schedule(s) if s.is_empty() => Err(invalid!("empty relaxation schedule")),
            Relaxation::Schedule(s) => match s.iter().find(|&&l| !ok(l)) {
                Some(l) => Err(invalid!("relaxation {l} is outside (0, 1)")),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// `λ_n` for the `n`-th update (0-based).
    pub fn at(&self, n: usize) -> f64 {
        match self {
            Relaxation::Constant(l) => *l,
            Relaxation::Schedule(s) => s[n.min(s.len() - 1)],
            Relaxation::Unrelaxed => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct KmConfig {
    pub mu: f64,
    pub relaxation: Relaxation,
    pub max_iters: usize,
    /// Stop once `‖f_{n+1} − f_n‖ / ‖f_n‖` drops below this.
    pub stop_tol: f64,
    pub record_trace: bool,
}

impl Default for KmConfig {
    fn default() -> Self {
        Self {
            mu: 0.1,
            relaxation: Relaxation::Constant(0.5),
            max_iters: 20,
            stop_tol: 1e-5,
            record_trace: true,
        }
    }
}

impl KmConfig {
    /// One unrelaxed step with `μ = 0`: returns `Q(g)`.
    pub fn feed_forward() -> Self {
        Self {
            mu: 0.0,
            relaxation: Relaxation::Unrelaxed,
            max_iters: 1,
            stop_tol: 0.0,
            record_trace: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(invalid!("mu must lie in [0, 1], got {}", self.mu));
        }
        if self.max_iters == 0 {
            return Err(invalid!("max_iters must be positive"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(invalid!("stop_tol must be non-negative"));
        }
        self.relaxation.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    /// `‖f_{n+1} − f_n‖` per update.
    pub residual: Vec<f64>,
    /// PSNR of `f_{n+1}` against the reference, when one is given.
    pub psnr_iterate: Vec<f64>,
    /// PSNR of `Q(f_n)` against the reference, when one is given.
    pub psnr_denoised: Vec<f64>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual.is_empty()
    }

    /// Tab-separated table with a header line.
    pub fn to_table(&self) -> String {
        use core::fmt::Write;
        let mut out = String::from("iteration\tresidual\tpsnr_f\tpsnr_q\n");
        for i in 0..self.residual.len() {
            let pf = self.psnr_iterate.get(i).copied().unwrap_or(f64::NAN);
            let pq = self.psnr_denoised.get(i).copied().unwrap_or(f64::NAN);
            let _ = writeln!(
                out,
                "{}\t{:.6e}\t{:.4}\t{:.4}",
                i + 1,
                self.residual[i],
                pf,
                pq
            );
        }
        out
    }
}

/// Optional ground truth for the PSNR columns of the trace.
#[derive(Debug, Clone, Copy)]
pub struct Reference<'a> {
    pub image: &'a Image,
    pub peak: f64,
}

#[derive(Debug, Clone)]
pub struct KmOutcome {
    pub estimate: Image,
    pub trace: IterationTrace,
    pub converged: bool,
}

pub fn km_denoise<Q: Denoiser + ?Sized>(
    g: &Image,
    q: &Q,
    cfg: &KmConfig,
    reference: Option<Reference<'_>>,
) -> Result<KmOutcome> {
    cfg.validate()?;
    if let Some(r) = reference {
        g.check_same_dims(r.image)?;
    }
    let mu = cfg.mu;
    let mut f = g.clone();
    let mut trace = IterationTrace::default();
    let mut converged = false;
    for n in 0..cfg.max_iters {
        let qn = q.denoise(&f)?;
        if qn.dims() != f.dims() {
            return Err(invalid!(
                "denoiser changed the image size from {:?} to {:?}",
                f.dims(),
                qn.dims()
            ));
        }
        let lambda = cfg.relaxation.at(n);
        let mut next = f.clone();
        for ((x, gi), qi) in next.data_mut().iter_mut().zip(g.data()).zip(qn.data()) {
            let target = mu * gi + (1.0 - mu) * qi;
            *x = if lambda == 1.0 {
                target
            } else {
                *x + lambda * (target - *x)
            };
        }
        if !next.is_finite() {
            return Err(numeric!("iterate {} is not finite", n + 1));
        }
        let step = linalg::norm(&next.sub(&f)?.into_data());
        let base = f.norm();
        if cfg.record_trace {
            trace.residual.push(step);
            if let Some(r) = reference {
                trace
                    .psnr_iterate
                    .push(metrics::psnr(&next, r.image, r.peak)?);
                trace
                    .psnr_denoised
                    .push(metrics::psnr(&qn, r.image, r.peak)?);
            }
        }
        f = next;
        let rel = if base > 0.0 { step / base } else { step };
        if rel < cfg.stop_tol {
            converged = true;
            break;
        }
    }
    Ok(KmOutcome {
        estimate: f,
        trace,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzConfig {
    /// Subspace growth steps per probe; each step costs two evaluations of `Q`.
    pub steps: usize,
    /// Finite-difference step relative to `max(‖z‖, 1)`.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        Self {
            steps: 16,
            epsilon: 1e-6,
            seed: 0x11b5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub value: f64,
    /// Index of the probe that attained the maximum.
    pub probe: usize,
}

/// Lower estimate of the Lipschitz constant of `Q` from finite-difference
/// Jacobian products. Around each probe `z` a subspace of directions is
/// grown (random directions plus the images `J v` of the current best
/// direction) and the largest singular value of `J` restricted to it is
/// taken. For a linear `Q` on `n` pixels the estimate is exact once the
/// subspace spans all `n` directions.
pub fn estimate_lipschitz<Q: Denoiser + ?Sized>(
    q: &Q,
    probes: &[Image],
    cfg: &LipschitzConfig,
) -> Result<LipschitzEstimate> {
    if probes.is_empty() {
        return Err(invalid!("at least one probe image is required"));
    }
    if cfg.steps == 0 || !(cfg.epsilon > 0.0) {
        return Err(invalid!("steps and epsilon must be positive"));
    }
    let mut rng = rng::seeded(cfg.seed);
    let mut best = LipschitzEstimate {
        value: 0.0,
        probe: 0,
    };
    for (index, z) in probes.iter().enumerate() {
        let (h, w) = z.dims();
        let n = z.len();
        let base = q.denoise(z)?;
        let eps = cfg.epsilon * z.norm().max(1.0);
        let jvp = |v: &[f64]| -> Result<Vec<f64>> {
            let moved: Vec<f64> = z.data().iter().zip(v).map(|(a, b)| a + eps * b).collect();
            if moved.iter().zip(z.data()).all(|(a, b)| a == b) {
                return Err(numeric!("finite-difference step {eps:e} underflows"));
            }
            let out = q.denoise(&Image::new(h, w, moved)?)?;
            Ok(out
                .data()
                .iter()
                .zip(base.data())
                .map(|(a, b)| (a - b) / eps)
                .collect())
        };
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut images: Vec<Vec<f64>> = Vec::new();
        let push = |candidate: Vec<f64>,
                    basis: &mut Vec<Vec<f64>>,
                    images: &mut Vec<Vec<f64>>|
         -> Result<()> {
            if basis.len() >= n {
                return Ok(());
            }
            let mut v = candidate;
            for _ in 0..2 {
                for b in basis.iter() {
                    let p = linalg::dot(&v, b);
                    linalg::axpy(-p, b, &mut v);
                }
            }
            let nv = linalg::norm(&v);
            if nv < 1e-8 {
                return Ok(());
            }
            v.iter_mut().for_each(|x| *x /= nv);
            images.push(jvp(&v)?);
            basis.push(v);
            Ok(())
        };
        push(rng::unit_vector(&mut rng, n), &mut basis, &mut images)?;
        let mut value = 0.0;
        for _ in 0..cfg.steps {
            let jv = Matrix::from_columns(&images)?;
            let svd = linalg::svd(&jv)?;
            value = svd.singular_values[0];
            let top: Vec<f64> = svd.v.column(0);
            let mut image = vec![0.0; n];
            for (coef, col) in top.iter().zip(&images) {
                linalg::axpy(*coef, col, &mut image);
            }
            push(image, &mut basis, &mut images)?;
            push(rng::unit_vector(&mut rng, n), &mut basis, &mut images)?;
        }
        let jv = Matrix::from_columns(&images)?;
        value = f64::max(value, linalg::singular_values(&jv)?[0]);
        if value > best.value {
            best = LipschitzEstimate {
                value,
                probe: index,
            };
        }
    }
    Ok(best)
}

/// Default lower bound on `μ`.
pub const MU_FLOOR: f64 = 0.1;

/// `max(1 − 1/L, floor)`, kept inside `(0, 1)`.
pub fn suggest_mu(lipschitz: f64, floor: f64) -> f64 {
    let formula = if lipschitz > 0.0 {
        1.0 - 1.0 / lipschitz
    } else {
        f64::NEG_INFINITY
    };
    formula.max(floor).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale(c: f64) -> impl Fn(&Image) -> Result<Image> {
        move |f: &Image| Ok(f.scale(c))
    }

    #[test]
    fn identity_map_is_fixed_immediately() {
        let g = Image::from_fn(4, 4, |r, c| (r + 2 * c) as f64);
        let out = km_denoise(&g, &|f: &Image| Ok(f.clone()), &KmConfig::default(), None).unwrap();
        assert_eq!(out.estimate, g);
        assert!(out.converged);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn feed_forward_returns_q_of_g() {
        let g = Image::from_fn(3, 5, |r, c| (r * c) as f64 - 1.0);
        let out = km_denoise(&g, &scale(0.3), &KmConfig::feed_forward(), None).unwrap();
        assert_eq!(out.estimate, g.scale(0.3));
    }

    #[test]
    fn schedules_are_validated() {
        for relaxation in [
            Relaxation::Constant(0.0),
            Relaxation::Constant(1.0),
            Relaxation::Schedule(vec![0.5, 1.0]),
            Relaxation::Schedule(vec![]),
        ] {
            let cfg = KmConfig {
                relaxation,
                ..Default::default()
            };
            assert!(cfg.validate().is_err());
        }
        assert!(KmConfig {
            mu: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn shape_change_is_rejected() {
        let g = Image::zeros(4, 4);
        let bad = |_: &Image| Ok(Image::zeros(2, 2));
        assert!(km_denoise(&g, &bad, &KmConfig::default(), None).is_err());
    }

    #[test]
    fn mu_suggestions() {
        assert!((suggest_mu(2.0, MU_FLOOR) - 0.5).abs() < 1e-15);
        assert_eq!(suggest_mu(0.8, MU_FLOOR), MU_FLOOR);
        assert!((suggest_mu(10.0, MU_FLOOR) - 0.9).abs() < 1e-15);
    }
}
