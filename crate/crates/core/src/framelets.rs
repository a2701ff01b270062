//! Frames, perfect reconstruction and single-layer convolutional framelets.
//!
//! A convolutional framelet layer maps a signal `Z` (`n×p`, one column per
//! channel) to coefficients
//!
//! ```text
//! C = Φᵀ (Z ⊛ Ψ̄) = Φᵀ H_{d|p}(Z) Ψ
//! ```
//!
//! and synthesizes with `Z = (Φ̃ C) ⊛ ν(Ψ̃)`, where `ν` carries the `1/d`
//! normalization. When `Φ̃Φᵀ = I` and `ΨΨ̃ᵀ = I` the pair reconstructs
//! perfectly.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::hankel::{self, FilterBank};
use crate::linalg::{self, Matrix};
use crate::rng;

/// A linear analysis operator `W` with its adjoint `Wᵀ` and a synthesis
/// operator `W̃ᵀ`. Signals and coefficients are flat vectors.
pub trait Frame {
    fn signal_len(&self) -> usize;
    fn coeff_len(&self) -> usize;
    /// `W f`
    fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>>;
    /// `Wᵀ c`
    fn adjoint(&self, coeffs: &[f64]) -> Result<Vec<f64>>;
    /// `W̃ᵀ c`
    fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>>;
}

/// Frame given by explicit matrices: `W` and `W̃`, both `m×n`.
#[derive(Debug, Clone)]
pub struct DenseFrame {
    analysis: Matrix,
    dual: Matrix,
}

impl DenseFrame {
    pub fn new(analysis: Matrix, dual: Matrix) -> Result<Self> {
        if analysis.rows() != dual.rows() || analysis.cols() != dual.cols() {
            return Err(invalid!("analysis and dual operators differ in shape"));
        }
        Ok(Self { analysis, dual })
    }

    /// `W̃ = W`.
    pub fn self_dual(analysis: Matrix) -> Self {
        Self {
            dual: analysis.clone(),
            analysis,
        }
    }
}

impl Frame for DenseFrame {
    fn signal_len(&self) -> usize {
        self.analysis.cols()
    }

    fn coeff_len(&self) -> usize {
        self.analysis.rows()
    }

    fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>> {
        self.analysis.mul_vec(signal)
    }

    fn adjoint(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.analysis.transpose_mul_vec(coeffs)
    }

    fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.dual.transpose_mul_vec(coeffs)
    }
}

/// Uses `W̃ = W / scale` as the dual of another frame. For a tight frame with
/// bound `α`, `scale = α` gives perfect reconstruction.
#[derive(Debug, Clone, Copy)]
pub struct ScaledAdjoint<'a, F: Frame + ?Sized> {
    pub frame: &'a F,
    pub scale: f64,
}

impl<F: Frame + ?Sized> Frame for ScaledAdjoint<'_, F> {
    fn signal_len(&self) -> usize {
        self.frame.signal_len()
    }

    fn coeff_len(&self) -> usize {
        self.frame.coeff_len()
    }

    fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>> {
        self.frame.analyze(signal)
    }

    fn adjoint(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.frame.adjoint(coeffs)
    }

    fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.frame.adjoint(coeffs)?;
        out.iter_mut().for_each(|x| *x /= self.scale);
        Ok(out)
    }
}

/// Pooling `Φ` and unpooling `Φ̃` with `Φ̃ Φᵀ = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingPair {
    phi: Matrix,
    phi_dual: Matrix,
}

impl PoolingPair {
    pub const TOLERANCE: f64 = 1e-10;

    pub fn new(phi: Matrix, phi_dual: Matrix) -> Result<Self> {
        let n = phi.rows();
        if phi.cols() != n || phi_dual.rows() != n || phi_dual.cols() != n {
            return Err(invalid!("pooling matrices must both be {n}x{n}"));
        }
        let residual = phi_dual
            .matmul(&phi.transpose())?
            .sub(&Matrix::identity(n))?
            .max_abs();
        if residual > Self::TOLERANCE {
            return Err(invalid!("Φ̃Φᵀ deviates from identity by {residual:e}"));
        }
        Ok(Self { phi, phi_dual })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            phi: Matrix::identity(n),
            phi_dual: Matrix::identity(n),
        }
    }

    /// Pairs an invertible `Φ` with `Φ̃ = Φ^{-ᵀ}`.
    pub fn with_canonical_dual(phi: Matrix) -> Result<Self> {
        let phi_dual = linalg::inverse(&phi.transpose())?;
        Self::new(phi, phi_dual)
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn phi_dual(&self) -> &Matrix {
        &self.phi_dual
    }

    pub fn len(&self) -> usize {
        self.phi.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.rows() == 0
    }
}

/// Framelet coefficients `C`, `n×q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    pub values: Matrix,
}

/// Single-layer convolutional framelet: `(Φ, Ψ)` for analysis and `(Φ̃, Ψ̃)`
/// for synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOperator {
    pooling: PoolingPair,
    encoder: FilterBank,
    decoder: FilterBank,
    declared_bounds: Option<(f64, f64)>,
}

impl FrameOperator {
    pub fn new(pooling: PoolingPair, encoder: FilterBank, decoder: FilterBank) -> Result<Self> {
        if encoder.taps() != decoder.taps()
            || encoder.in_channels() != decoder.in_channels()
            || encoder.out_channels() != decoder.out_channels()
        {
            return Err(invalid!("encoder and decoder filter banks differ in shape"));
        }
        if encoder.taps() > pooling.len() {
            return Err(invalid!(
                "filter length {} exceeds signal length {}",
                encoder.taps(),
                pooling.len()
            ));
        }
        Ok(Self {
            pooling,
            encoder,
            decoder,
            declared_bounds: None,
        })
    }

    /// Builds the decoder as the canonical dual `Ψ̃ = (ΨΨᵀ)^{-1}Ψ`, so that
    /// `ΨΨ̃ᵀ = I` holds whenever `Ψ` has full row rank.
    pub fn with_canonical_dual(pooling: PoolingPair, encoder: FilterBank) -> Result<Self> {
        let psi = encoder.coefficients();
        let gram = psi.matmul(&psi.transpose())?;
        let dual = linalg::inverse(&gram)?.matmul(psi)?;
        let decoder = FilterBank::new(
            encoder.taps(),
            encoder.in_channels(),
            encoder.out_channels(),
            dual,
        )?;
        Self::new(pooling, encoder, decoder)
    }

    /// `Φ = Φ̃ = I`, `Ψ = Ψ̃ = I_d` on a single channel.
    pub fn identity(n: usize, taps: usize) -> Result<Self> {
        let bank = FilterBank::new(taps, 1, taps, Matrix::identity(taps))?;
        Self::new(PoolingPair::identity(n), bank.clone(), bank)
    }

    pub fn with_declared_bounds(mut self, lower: f64, upper: f64) -> Self {
        self.declared_bounds = Some((lower, upper));
        self
    }

    pub fn declared_bounds(&self) -> Option<(f64, f64)> {
        self.declared_bounds
    }

    pub fn pooling(&self) -> &PoolingPair {
        &self.pooling
    }

    pub fn encoder(&self) -> &FilterBank {
        &self.encoder
    }

    pub fn decoder(&self) -> &FilterBank {
        &self.decoder
    }

    pub fn signal_rows(&self) -> usize {
        self.pooling.len()
    }

    pub fn channels(&self) -> usize {
        self.encoder.in_channels()
    }

    /// Replaces the decoder filters, keeping everything else.
    pub fn with_decoder(&self, decoder: FilterBank) -> Result<Self> {
        Self::new(self.pooling.clone(), self.encoder.clone(), decoder)
    }

    fn check_signal(&self, z: &Matrix) -> Result<()> {
        if z.rows() != self.signal_rows() || z.cols() != self.channels() {
            return Err(invalid!(
                "signal is {}x{}, operator expects {}x{}",
                z.rows(),
                z.cols(),
                self.signal_rows(),
                self.channels()
            ));
        }
        Ok(())
    }

    fn check_coeffs(&self, c: &Matrix) -> Result<()> {
        if c.rows() != self.signal_rows() || c.cols() != self.encoder.out_channels() {
            return Err(invalid!(
                "coefficients are {}x{}, operator expects {}x{}",
                c.rows(),
                c.cols(),
                self.signal_rows(),
                self.encoder.out_channels()
            ));
        }
        Ok(())
    }

    /// `C = Φᵀ (Z ⊛ Ψ̄)`.
    pub fn encode(&self, z: &Matrix) -> Result<CoefficientTensor> {
        self.check_signal(z)?;
        let filtered = hankel::mimo_conv(z, &self.encoder)?;
        let values = self.pooling.phi.transpose().matmul(&filtered)?;
        Ok(CoefficientTensor { values })
    }

    /// `Z = (Φ̃ C) ⊛ ν(Ψ̃)`.
    pub fn decode(&self, c: &CoefficientTensor) -> Result<Matrix> {
        self.check_coeffs(&c.values)?;
        let unpooled = self.pooling.phi_dual.matmul(&c.values)?;
        Ok(self.conv_decoder(&unpooled, &self.decoder))
    }

    /// `Σ_i B_i ⊛ filter_{j,i} / d` for every output channel `j`.
    fn conv_decoder(&self, b: &Matrix, bank: &FilterBank) -> Matrix {
        let n = b.rows();
        let d = bank.taps() as f64;
        let mut out = Matrix::zeros(n, bank.in_channels());
        for i in 0..bank.out_channels() {
            let bi = b.column(i);
            for j in 0..bank.in_channels() {
                let y = hankel::circular_conv(&bi, &bank.filter(j, i));
                for (k, v) in y.into_iter().enumerate() {
                    out.set(k, j, out.get(k, j) + v / d);
                }
            }
        }
        out
    }

    fn to_signal(&self, flat: &[f64]) -> Result<Matrix> {
        Matrix::from_vec(self.signal_rows(), self.channels(), flat.to_vec())
    }

    fn to_coeffs(&self, flat: &[f64]) -> Result<CoefficientTensor> {
        Ok(CoefficientTensor {
            values: Matrix::from_vec(
                self.signal_rows(),
                self.encoder.out_channels(),
                flat.to_vec(),
            )?,
        })
    }
}

impl Frame for FrameOperator {
    fn signal_len(&self) -> usize {
        self.signal_rows() * self.channels()
    }

    fn coeff_len(&self) -> usize {
        self.signal_rows() * self.encoder.out_channels()
    }

    fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode(&self.to_signal(signal)?)?.values.into_vec())
    }

    fn adjoint(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        // Wᵀ C = H*(Φ C Ψᵀ), the un-normalized decoder built from Ψ itself.
        let c = self.to_coeffs(coeffs)?;
        let pooled = self.pooling.phi.matmul(&c.values)?;
        let m = pooled.matmul(&self.encoder.coefficients().transpose())?;
        Ok(hankel::hankel_adjoint(&m, self.encoder.taps(), self.channels())?.into_vec())
    }

    fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.decode(&self.to_coeffs(coeffs)?)?.into_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameBounds {
    pub lower: f64,
    pub upper: f64,
    /// False when the lower bound collapsed to zero.
    pub is_frame: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundsConfig {
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            restarts: 8,
            seed: 0x5eed,
        }
    }
}

fn gram_apply<F: Frame + ?Sized>(op: &F, v: &[f64]) -> Result<Vec<f64>> {
    op.adjoint(&op.analyze(v)?)
}

/// Estimates `α ≤ ‖Wf‖²/‖f‖² ≤ β` by power iteration on `WᵀW` (upper) and
/// on `βI − WᵀW` (lower), widened by `trials` sampled unit vectors.
pub fn estimate_frame_bounds<F: Frame + ?Sized>(
    op: &F,
    trials: usize,
    cfg: BoundsConfig,
) -> Result<FrameBounds> {
    if trials == 0 {
        return Err(invalid!("at least one trial is required"));
    }
    let n = op.signal_len();
    let mut rng = rng::seeded(cfg.seed);

    let mut sampled_min = f64::INFINITY;
    let mut sampled_max: f64 = 0.0;
    for _ in 0..trials {
        let v = rng::unit_vector(&mut rng, n);
        let ratio = linalg::dot(&v, &gram_apply(op, &v)?);
        sampled_min = sampled_min.min(ratio);
        sampled_max = sampled_max.max(ratio);
    }

    let mut upper: f64 = 0.0;
    for _ in 0..cfg.restarts.max(1) {
        let mut v = rng::unit_vector(&mut rng, n);
        for _ in 0..cfg.iterations {
            let g = gram_apply(op, &v)?;
            upper = upper.max(linalg::dot(&v, &g));
            let nrm = linalg::norm(&g);
            if nrm == 0.0 {
                break;
            }
            v = g.into_iter().map(|x| x / nrm).collect();
        }
    }
    upper = upper.max(sampled_max);

    let mut shifted_top: f64 = 0.0;
    for _ in 0..cfg.restarts.max(1) {
        let mut v = rng::unit_vector(&mut rng, n);
        for _ in 0..cfg.iterations {
            let g = gram_apply(op, &v)?;
            let m: Vec<f64> = v.iter().zip(&g).map(|(vi, gi)| upper * vi - gi).collect();
            shifted_top = shifted_top.max(linalg::dot(&v, &m));
            let nrm = linalg::norm(&m);
            if nrm == 0.0 {
                break;
            }
            v = m.into_iter().map(|x| x / nrm).collect();
        }
    }
    let mut lower = (upper - shifted_top).min(sampled_min).max(0.0);
    let is_frame = lower > 1e-10 * upper;
    if !is_frame {
        lower = 0.0;
    }
    Ok(FrameBounds {
        lower,
        upper,
        is_frame,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrReport {
    pub passed: bool,
    pub max_residual: f64,
    pub probes: usize,
}

/// Largest signal length probed with the full canonical basis.
pub const PR_EXHAUSTIVE_LIMIT: usize = 1024;
const PR_RANDOM_PROBES: usize = 256;

/// Checks `W̃ᵀ W = I` on the canonical basis (or on random Gaussian probes
/// for long signals). The residual is `max ‖W̃ᵀWx − x‖_∞ / ‖x‖_∞`.
pub fn verify_pr<F: Frame + ?Sized>(op: &F, tolerance: f64) -> Result<PrReport> {
    let n = op.signal_len();
    let mut max_residual: f64 = 0.0;
    let mut check = |x: &[f64]| -> Result<()> {
        let back = op.synthesize(&op.analyze(x)?)?;
        let scale = x.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
        max_residual = max_residual.max(linalg::max_abs_diff(&back, x) / scale);
        Ok(())
    };
    let probes = if n <= PR_EXHAUSTIVE_LIMIT {
        let mut e = vec![0.0; n];
        for i in 0..n {
            e[i] = 1.0;
            check(&e)?;
            e[i] = 0.0;
        }
        n
    } else {
        let mut rng = rng::seeded(0x0001_d0c5);
        for _ in 0..PR_RANDOM_PROBES {
            check(&rng::gaussian_vec(&mut rng, n, 1.0))?;
        }
        PR_RANDOM_PROBES
    };
    Ok(PrReport {
        passed: max_residual <= tolerance,
        max_residual,
        probes,
    })
}

/// Tightness check `WᵀW = I` (the frame paired with its own adjoint).
pub fn verify_tight<F: Frame + ?Sized>(op: &F, tolerance: f64) -> Result<PrReport> {
    verify_pr(
        &ScaledAdjoint {
            frame: op,
            scale: 1.0,
        },
        tolerance,
    )
}

/// Encoder/decoder filters `Ψ = Ψ̃ = V` where `V` spans the top-`r` right
/// singular subspace of `H_d(f)`, so `ΨΨ̃ᵀ` is the orthogonal projection onto
/// that subspace.
#[derive(Debug, Clone)]
pub struct LowRankPair {
    pub psi: Matrix,
    pub psi_dual: Matrix,
    /// Full singular spectrum of `H_d(f)`.
    pub singular_values: Vec<f64>,
}

impl LowRankPair {
    pub fn rank(&self) -> usize {
        self.psi.cols()
    }

    pub fn taps(&self) -> usize {
        self.psi.rows()
    }

    /// `ΨΨ̃ᵀ`
    pub fn projection(&self) -> Matrix {
        self.psi
            .matmul(&self.psi_dual.transpose())
            .expect("shapes agree by construction")
    }

    /// Single-channel framelet with identity pooling over `n` samples.
    pub fn frame_operator(&self, n: usize) -> Result<FrameOperator> {
        let (d, r) = (self.taps(), self.rank());
        let enc = FilterBank::new(d, 1, r, self.psi.clone())?;
        let dec = FilterBank::new(d, 1, r, self.psi_dual.clone())?;
        FrameOperator::new(PoolingPair::identity(n), enc, dec)
    }
}

pub fn lowrank_pair_from_signal(f: &[f64], taps: usize, rank: usize) -> Result<LowRankPair> {
    if rank == 0 {
        return Err(invalid!("rank must be at least 1"));
    }
    if rank > taps {
        return Err(invalid!("rank {rank} exceeds filter length {taps}"));
    }
    let h = hankel::build_hankel(f, taps)?;
    let svd = linalg::svd(h.matrix())?;
    let v = svd.v.columns(0, rank);
    Ok(LowRankPair {
        psi: v.clone(),
        psi_dual: v,
        singular_values: svd.singular_values,
    })
}

/// Filters spanning the orthogonal complement of the top-`r` right singular
/// subspace of `H_d(f)`; they annihilate `f` when `rank H_d(f) ≤ r`.
pub fn annihilating_filters(f: &[f64], taps: usize, rank: usize) -> Result<Matrix> {
    if rank >= taps {
        return Err(invalid!("rank {rank} leaves no complement in {taps} taps"));
    }
    let h = hankel::build_hankel(f, taps)?;
    let svd = linalg::svd(h.matrix())?;
    Ok(svd.v.columns(rank, taps))
}

/// `‖f ⊛ Ψ̄‖ / ‖f‖` for a single-channel signal and a `d×q` filter matrix.
pub fn annihilation_residual(f: &[f64], psi: &Matrix) -> Result<f64> {
    let fnorm = linalg::norm(f);
    if fnorm == 0.0 {
        return Err(Error::InvalidArgument(
            "annihilation ratio is undefined for a zero signal".into(),
        ));
    }
    let bank = FilterBank::new(psi.rows(), 1, psi.cols(), psi.clone())?;
    let z = Matrix::from_vec(f.len(), 1, f.to_vec())?;
    let y = hankel::mimo_conv(&z, &bank)?;
    Ok(y.frobenius_norm() / fnorm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_frame_bounds() {
        let op = DenseFrame::self_dual(Matrix::identity(5));
        let b = estimate_frame_bounds(&op, 4, BoundsConfig::default()).unwrap();
        assert!((b.lower - 1.0).abs() < 1e-12 && (b.upper - 1.0).abs() < 1e-12);
        let op2 = DenseFrame::self_dual(Matrix::identity(5).scale(2.0));
        let b2 = estimate_frame_bounds(&op2, 4, BoundsConfig::default()).unwrap();
        assert!((b2.lower - 4.0).abs() < 1e-12 && (b2.upper - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_operator_is_not_a_frame() {
        let mut w = Matrix::identity(4);
        w.set(3, 3, 0.0);
        let b =
            estimate_frame_bounds(&DenseFrame::self_dual(w), 4, BoundsConfig::default()).unwrap();
        assert!(!b.is_frame);
        assert_eq!(b.lower, 0.0);
    }

    #[test]
    fn zero_trials_rejected() {
        let op = DenseFrame::self_dual(Matrix::identity(2));
        assert!(estimate_frame_bounds(&op, 0, BoundsConfig::default()).is_err());
    }

    #[test]
    fn orthonormal_self_dual_passes_pr() {
        let r = verify_pr(&DenseFrame::self_dual(Matrix::identity(6)), 1e-14).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_residual, 0.0);
    }

    #[test]
    fn zeroed_decoder_fails_pr_with_unit_residual() {
        let op = FrameOperator::identity(8, 3).unwrap();
        let zero = FilterBank::new(3, 1, 3, Matrix::zeros(3, 3)).unwrap();
        let broken = op.with_decoder(zero).unwrap();
        let r = verify_pr(&broken, 1e-10).unwrap();
        assert!(!r.passed);
        assert_eq!(r.max_residual, 1.0);
    }

    #[test]
    fn identity_pair_round_trip_and_trivial_encodes() {
        let op = FrameOperator::identity(6, 1).unwrap();
        let f = Matrix::from_vec(6, 1, vec![1.0, -2.0, 3.5, 0.0, 4.0, 7.0]).unwrap();
        let c = op.encode(&f).unwrap();
        assert_eq!(c.values, f);
        assert_eq!(op.decode(&c).unwrap(), f);
        let zero = op.encode(&Matrix::zeros(6, 1)).unwrap();
        assert_eq!(zero.values.max_abs(), 0.0);
    }

    #[test]
    fn decode_is_linear_in_coefficients() {
        let op = FrameOperator::identity(7, 3).unwrap();
        let f = Matrix::from_fn(7, 1, |i, _| libm::cos(i as f64));
        let c = op.encode(&f).unwrap();
        let scaled = CoefficientTensor {
            values: c.values.scale(2.5),
        };
        let a = op.decode(&c).unwrap().scale(2.5);
        let b = op.decode(&scaled).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn rank_arguments_are_validated() {
        let f = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(lowrank_pair_from_signal(&f, 3, 0).is_err());
        assert!(lowrank_pair_from_signal(&f, 3, 4).is_err());
        assert!(annihilation_residual(&[0.0; 4], &Matrix::identity(2)).is_err());
    }

    #[test]
    fn impulse_has_unit_annihilation_residual() {
        let f = [0.3, -1.0, 2.0, 5.0, 1.0];
        let psi = Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        assert!((annihilation_residual(&f, &psi).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pooling_pair_rejects_non_dual() {
        assert!(PoolingPair::new(Matrix::identity(3), Matrix::identity(3).scale(2.0)).is_err());
    }
}
