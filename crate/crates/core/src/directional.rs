//! Shift-invariant directional subband transform.
//!
//! An undecimated pyramid splits the image into a lowpass residue and one
//! detail band per level (à trous, dilation `2^level`). Each detail band is
//! split further by oriented second-derivative kernels
//! `(cos θ ∂x + sin θ ∂y)²` at `θ = mπ/M`, so a band responds to structure
//! whose frequency vector points along `θ` (columns are `x`, rows are `y`
//! growing downwards).
//!
//! All analysis kernels are finite, real and point-symmetric. Synthesis uses
//! the canonical dual computed on the working grid: with
//! `S(ω) = Σ_k |T̂_k(ω)|²` the dual responses are `T̂_k / S`, which gives
//! `Σ_k T̃_kᵀ T_k = I` exactly (up to rounding).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::fourier::{self, Complex64};
use crate::image::{Image, SubbandStack};
use crate::linalg;
use crate::rng;

/// Resolution-of-identity tolerance certified at construction.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TransformConfig {
    pub levels: usize,
    /// Direction count per level, finest level first.
    pub directions: Vec<usize>,
    /// Fold the coarsest (single-direction) detail band into the lowpass.
    pub merge_coarsest: bool,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self::fifteen_band()
    }
}

impl TransformConfig {
    /// Four levels with 8, 4, 2, 1 directions, coarsest band merged: 15 bands.
    pub fn fifteen_band() -> Self {
        Self {
            levels: 4,
            directions: vec![8, 4, 2, 1],
            merge_coarsest: true,
        }
    }

    pub fn band_count(&self) -> usize {
        let total = 1 + self.directions.iter().sum::<usize>();
        if self.merge_coarsest {
            total - 1
        } else {
            total
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(invalid!("at least one level is required"));
        }
        if self.directions.len() != self.levels {
            return Err(invalid!(
                "{} direction counts given for {} levels",
                self.directions.len(),
                self.levels
            ));
        }
        if let Some(&m) = self
            .directions
            .iter()
            .find(|&&m| m == 0 || !m.is_power_of_two())
        {
            return Err(invalid!("direction count {m} is not a power of two"));
        }
        if self.merge_coarsest && self.directions[self.levels - 1] != 1 {
            return Err(invalid!(
                "merging needs a single direction at the coarsest level"
            ));
        }
        Ok(())
    }
}

/// Small odd-sized kernel centred on its middle sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    radius: (usize, usize),
    data: Vec<f64>,
}

impl Kernel2d {
    pub fn delta() -> Self {
        Self {
            radius: (0, 0),
            data: vec![1.0],
        }
    }

    pub fn from_rows(radius: (usize, usize), data: Vec<f64>) -> Self {
        assert_eq!(data.len(), (2 * radius.0 + 1) * (2 * radius.1 + 1));
        Self { radius, data }
    }

    pub fn size(&self) -> (usize, usize) {
        (2 * self.radius.0 + 1, 2 * self.radius.1 + 1)
    }

    pub fn radius(&self) -> (usize, usize) {
        self.radius
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Coefficient at offset `(dr, dc)` from the centre.
    pub fn at(&self, dr: isize, dc: isize) -> f64 {
        let (rr, rc) = (self.radius.0 as isize, self.radius.1 as isize);
        if dr.abs() > rr || dc.abs() > rc {
            return 0.0;
        }
        let w = 2 * rc + 1;
        self.data[((dr + rr) * w + dc + rc) as usize]
    }

    /// Inserts `factor - 1` zeros between taps.
    pub fn dilate(&self, factor: usize) -> Self {
        let radius = (self.radius.0 * factor, self.radius.1 * factor);
        let (h, w) = (2 * radius.0 + 1, 2 * radius.1 + 1);
        let mut data = vec![0.0; h * w];
        for dr in -(self.radius.0 as isize)..=self.radius.0 as isize {
            for dc in -(self.radius.1 as isize)..=self.radius.1 as isize {
                let r = (dr * factor as isize + radius.0 as isize) as usize;
                let c = (dc * factor as isize + radius.1 as isize) as usize;
                data[r * w + c] = self.at(dr, dc);
            }
        }
        Self { radius, data }
    }

    /// Full (linear) convolution of two kernels.
    pub fn convolve(&self, other: &Self) -> Self {
        let radius = (
            self.radius.0 + other.radius.0,
            self.radius.1 + other.radius.1,
        );
        let w = 2 * radius.1 + 1;
        let mut data = vec![0.0; (2 * radius.0 + 1) * w];
        let (ar, ac) = (self.radius.0 as isize, self.radius.1 as isize);
        let (br, bc) = (other.radius.0 as isize, other.radius.1 as isize);
        for dr in -ar..=ar {
            for dc in -ac..=ac {
                let a = self.at(dr, dc);
                if a == 0.0 {
                    continue;
                }
                for er in -br..=br {
                    for ec in -bc..=bc {
                        let r = (dr + er + radius.0 as isize) as usize;
                        let c = (dc + ec + radius.1 as isize) as usize;
                        data[r * w + c] += a * other.at(er, ec);
                    }
                }
            }
        }
        Self { radius, data }
    }

    pub fn linear_combination(terms: &[(f64, &Kernel2d)]) -> Self {
        let radius = terms.iter().fold((0, 0), |acc, (_, k)| {
            (acc.0.max(k.radius.0), acc.1.max(k.radius.1))
        });
        let w = 2 * radius.1 + 1;
        let mut data = vec![0.0; (2 * radius.0 + 1) * w];
        for (coef, k) in terms {
            let (rr, rc) = (k.radius.0 as isize, k.radius.1 as isize);
            for dr in -rr..=rr {
                for dc in -rc..=rc {
                    let r = (dr + radius.0 as isize) as usize;
                    let c = (dc + radius.1 as isize) as usize;
                    data[r * w + c] += coef * k.at(dr, dc);
                }
            }
        }
        Self { radius, data }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            radius: self.radius,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    /// Real frequency response on an `h×w` circular grid. Kernels here are
    /// point-symmetric, so the response is real.
    pub fn response(&self, h: usize, w: usize) -> Vec<f64> {
        let mut grid = vec![0.0; h * w];
        let (rr, rc) = (self.radius.0 as isize, self.radius.1 as isize);
        for dr in -rr..=rr {
            for dc in -rc..=rc {
                let r = dr.rem_euclid(h as isize) as usize;
                let c = dc.rem_euclid(w as isize) as usize;
                grid[r * w + c] += self.at(dr, dc);
            }
        }
        fourier::forward_real(&grid, h, w)
            .into_iter()
            .map(|z| z.re)
            .collect()
    }
}

fn binomial_lowpass() -> Kernel2d {
    let taps = [0.25, 0.5, 0.25];
    let data = (0..9).map(|i| taps[i / 3] * taps[i % 3]).collect();
    Kernel2d::from_rows((1, 1), data)
}

/// `(cos θ ∂x + sin θ ∂y)²` with central second differences.
fn oriented_second_derivative(theta: f64) -> Kernel2d {
    let (c, s) = (libm::cos(theta), libm::sin(theta));
    let dxx = Kernel2d::from_rows((0, 1), vec![1.0, -2.0, 1.0]);
    let dyy = Kernel2d::from_rows((1, 0), vec![1.0, -2.0, 1.0]);
    let dxy = Kernel2d::from_rows(
        (1, 1),
        vec![0.25, 0.0, -0.25, 0.0, 0.0, 0.0, -0.25, 0.0, 0.25],
    );
    Kernel2d::linear_combination(&[(c * c, &dxx), (2.0 * c * s, &dxy), (s * s, &dyy)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandKind {
    /// Coarsest lowpass residue.
    Lowpass,
    /// Lowpass merged with the coarsest single-direction detail band.
    MergedLowpass,
    Directional {
        level: usize,
        direction: usize,
        angle: f64,
    },
}

#[derive(Debug, Clone)]
pub struct DirectionalTransform {
    config: TransformConfig,
    kernels: Vec<Kernel2d>,
    kinds: Vec<BandKind>,
    dual_fault: Option<(usize, f64)>,
    certified_residual: f64,
}

/// Frequency responses of a transform on one grid size.
#[derive(Debug, Clone)]
pub struct TransformPlan {
    height: usize,
    width: usize,
    analysis: Vec<Vec<f64>>,
    dual: Vec<Vec<f64>>,
}

const CERTIFICATION_PROBES: usize = 2;
const NORMALIZATION_GRID: usize = 64;

impl DirectionalTransform {
    pub fn build(config: TransformConfig) -> Result<Self> {
        config.validate()?;
        let mut kernels = Vec::with_capacity(config.band_count());
        let mut kinds = Vec::with_capacity(config.band_count());

        // Cumulative lowpass before each level.
        let mut approx = Vec::with_capacity(config.levels + 1);
        approx.push(Kernel2d::delta());
        for level in 0..config.levels {
            let next = approx[level].convolve(&binomial_lowpass().dilate(1 << level));
            approx.push(next);
        }

        let top = config.levels;
        if config.merge_coarsest {
            kernels.push(approx[top - 1].clone());
            kinds.push(BandKind::MergedLowpass);
        } else {
            kernels.push(approx[top].clone());
            kinds.push(BandKind::Lowpass);
        }

        let detail_levels = if config.merge_coarsest { top - 1 } else { top };
        for level in 0..detail_levels {
            let step = 1usize << level;
            let lowpass = binomial_lowpass().dilate(step);
            let highpass =
                Kernel2d::linear_combination(&[(1.0, &Kernel2d::delta()), (-1.0, &lowpass)]);
            let detail = approx[level].convolve(&highpass);
            let count = config.directions[level];
            for direction in 0..count {
                let angle = PI * direction as f64 / count as f64;
                let band = if count == 1 {
                    detail.clone()
                } else {
                    detail.convolve(&oriented_second_derivative(angle).dilate(step))
                };
                kernels.push(band);
                kinds.push(BandKind::Directional {
                    level,
                    direction,
                    angle,
                });
            }
        }

        // Equalize band gains: peak response 1 on a reference grid.
        for k in kernels.iter_mut() {
            let (sh, sw) = k.size();
            let n = NORMALIZATION_GRID
                .max(sh.next_power_of_two())
                .max(sw.next_power_of_two());
            let peak = k
                .response(n, n)
                .iter()
                .fold(0.0f64, |m, x| m.max(libm::fabs(*x)));
            if peak > 0.0 {
                *k = k.scaled(1.0 / peak);
            }
        }

        let mut t = Self {
            config,
            kernels,
            kinds,
            dual_fault: None,
            certified_residual: f64::NAN,
        };
        let (sh, sw) = t.support();
        let n = NORMALIZATION_GRID
            .max(sh.next_power_of_two())
            .max(sw.next_power_of_two());
        let residual = t.identity_residual(n, n, CERTIFICATION_PROBES, 0xce27)?;
        if !(residual <= IDENTITY_TOLERANCE) {
            return Err(Error::ConstructionFailure(alloc::format!(
                "resolution-of-identity residual {residual:e} exceeds {IDENTITY_TOLERANCE:e}"
            )));
        }
        t.certified_residual = residual;
        Ok(t)
    }

    pub fn config(&self) -> &TransformConfig {
        &self.config
    }

    pub fn band_count(&self) -> usize {
        self.kernels.len()
    }

    pub fn band_kinds(&self) -> &[BandKind] {
        &self.kinds
    }

    pub fn analysis_kernels(&self) -> &[Kernel2d] {
        &self.kernels
    }

    /// Residual measured when the transform was built.
    pub fn certified_residual(&self) -> f64 {
        self.certified_residual
    }

    /// Largest kernel footprint; images must be at least this large.
    pub fn support(&self) -> (usize, usize) {
        self.kernels.iter().fold((1, 1), |acc, k| {
            let s = k.size();
            (acc.0.max(s.0), acc.1.max(s.1))
        })
    }

    /// Scales the dual of one band; plans built afterwards no longer invert
    /// the analysis. Used to exercise failure reporting.
    pub fn with_corrupted_dual(&self, band: usize, factor: f64) -> Self {
        Self {
            dual_fault: Some((band, factor)),
            ..self.clone()
        }
    }

    pub fn plan(&self, height: usize, width: usize) -> Result<TransformPlan> {
        let (sh, sw) = self.support();
        if height < sh || width < sw {
            return Err(invalid!(
                "image {height}x{width} is smaller than the filter support {sh}x{sw}"
            ));
        }
        let analysis: Vec<Vec<f64>> = self
            .kernels
            .iter()
            .map(|k| k.response(height, width))
            .collect();
        let mut frame = vec![0.0; height * width];
        for resp in &analysis {
            for (s, r) in frame.iter_mut().zip(resp) {
                *s += r * r;
            }
        }
        let (lo, hi) = frame.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
        if !(lo > 1e-12 * hi) {
            return Err(Error::ConstructionFailure(alloc::format!(
                "frame operator is singular on a {height}x{width} grid (min {lo:e}, max {hi:e})"
            )));
        }
        let mut dual: Vec<Vec<f64>> = analysis
            .iter()
            .map(|resp| resp.iter().zip(&frame).map(|(r, s)| r / s).collect())
            .collect();
        if let Some((band, factor)) = self.dual_fault {
            if let Some(d) = dual.get_mut(band) {
                d.iter_mut().for_each(|x| *x *= factor);
            }
        }
        Ok(TransformPlan {
            height,
            width,
            analysis,
            dual,
        })
    }

    pub fn forward(&self, x: &Image) -> Result<SubbandStack> {
        self.plan(x.height(), x.width())?.forward(x)
    }

    pub fn inverse(&self, stack: &SubbandStack) -> Result<Image> {
        let (h, w) = stack.dims();
        self.plan(h, w)?.inverse(stack)
    }

    /// Max-abs error of `inverse(forward(x)) - x` over seeded random probes.
    pub fn identity_residual(
        &self,
        height: usize,
        width: usize,
        probes: usize,
        seed: u64,
    ) -> Result<f64> {
        let plan = self.plan(height, width)?;
        let mut rng = rng::seeded(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let x = Image::new(
                height,
                width,
                rng::gaussian_vec(&mut rng, height * width, 1.0),
            )?;
            let back = plan.inverse(&plan.forward(&x)?)?;
            worst = worst.max(linalg::max_abs_diff(back.data(), x.data()));
        }
        Ok(worst)
    }

    /// Band order after mirroring the image left-right or top-bottom: both
    /// map the direction `θ` to `π − θ`.
    pub fn flip_permutation(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.kinds.len());
        for kind in &self.kinds {
            match *kind {
                BandKind::Directional {
                    level, direction, ..
                } => {
                    let count = self.config.directions[level];
                    let mirrored = (count - direction) % count;
                    let idx = self
                        .kinds
                        .iter()
                        .position(|k| matches!(*k, BandKind::Directional { level: l, direction: d, .. } if l == level && d == mirrored))
                        .expect("every direction has a mirror");
                    out.push(idx);
                }
                _ => out.push(out.len()),
            }
        }
        out
    }
}

impl TransformPlan {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn band_count(&self) -> usize {
        self.analysis.len()
    }

    pub fn forward(&self, x: &Image) -> Result<SubbandStack> {
        if x.dims() != (self.height, self.width) {
            return Err(invalid!(
                "image is {}x{}, plan expects {}x{}",
                x.height(),
                x.width(),
                self.height,
                self.width
            ));
        }
        let spectrum = fourier::forward_real(x.data(), self.height, self.width);
        let bands = self
            .analysis
            .iter()
            .map(|resp| {
                let filtered: Vec<Complex64> =
                    spectrum.iter().zip(resp).map(|(z, r)| z * r).collect();
                Image::new(
                    self.height,
                    self.width,
                    fourier::inverse_real(filtered, self.height, self.width),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        SubbandStack::new(bands)
    }

    pub fn inverse(&self, stack: &SubbandStack) -> Result<Image> {
        if stack.band_count() != self.dual.len() {
            return Err(invalid!(
                "stack has {} bands, transform has {}",
                stack.band_count(),
                self.dual.len()
            ));
        }
        if stack.dims() != (self.height, self.width) {
            return Err(invalid!("stack size does not match the plan"));
        }
        let mut acc = vec![Complex64::new(0.0, 0.0); self.height * self.width];
        for (band, dual) in stack.bands().iter().zip(&self.dual) {
            let spectrum = fourier::forward_real(band.data(), self.height, self.width);
            for ((a, z), d) in acc.iter_mut().zip(&spectrum).zip(dual) {
                *a += z * d;
            }
        }
        Image::new(
            self.height,
            self.width,
            fourier::inverse_real(acc, self.height, self.width),
        )
    }

    /// Synthesis of a single band (all others zero).
    pub fn synthesize_band(&self, band: usize, values: &Image) -> Result<Image> {
        let spectrum = fourier::forward_real(values.data(), self.height, self.width);
        let out: Vec<Complex64> = spectrum
            .iter()
            .zip(&self.dual[band])
            .map(|(z, d)| z * d)
            .collect();
        Image::new(
            self.height,
            self.width,
            fourier::inverse_real(out, self.height, self.width),
        )
    }

    /// Spatial dual (synthesis) kernel of one band, as a full-size circular
    /// filter centred at the origin.
    pub fn dual_kernel(&self, band: usize) -> Image {
        let spectrum: Vec<Complex64> = self.dual[band]
            .iter()
            .map(|&d| Complex64::new(d, 0.0))
            .collect();
        Image::from_fn(self.height, self.width, {
            let spatial = fourier::inverse_real(spectrum, self.height, self.width);
            move |r, c| spatial[r * self.width + c]
        })
    }
}
