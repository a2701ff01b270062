//! Small parallel-beam CT simulator: analytic phantoms, ray-marched
//! projection, Poisson low-dose resampling and filtered backprojection.
//!
//! Image values are attenuation relative to water (water = 1, air = 0).
//! Sinograms store line integrals in pixel units; [`Geometry`] converts them
//! to dimensionless optical depth for the photon statistics.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{invalid, numeric, Result};
use crate::image::Image;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Geometry {
    /// Width of the square field of view in centimetres.
    pub fov_cm: f64,
    /// Linear attenuation of water in 1/cm.
    pub mu_water: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            fov_cm: 40.0,
            mu_water: 0.2,
        }
    }
}

impl Geometry {
    /// Factor turning a pixel-unit line integral into optical depth.
    pub fn optical_depth_scale(&self, size: usize) -> f64 {
        self.mu_water * self.fov_cm / size as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    angles: Vec<f64>,
    bins: usize,
    data: Vec<f64>,
    /// Set when some bin expected fewer than one photon.
    pub photon_starved: bool,
}

impl Sinogram {
    pub fn new(angles: Vec<f64>, bins: usize, data: Vec<f64>) -> Result<Self> {
        if angles.is_empty() || bins == 0 {
            return Err(invalid!("sinogram needs angles and bins"));
        }
        if data.len() != angles.len() * bins {
            return Err(invalid!(
                "expected {} values, got {}",
                angles.len() * bins,
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(numeric!("sinogram contains non-finite values"));
        }
        Ok(Self {
            angles,
            bins,
            data,
            photon_starved: false,
        })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.bins..(k + 1) * self.bins]
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.angles != other.angles || self.bins != other.bins {
            return Err(invalid!("sinogram geometries differ"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            data,
            photon_starved: self.photon_starved || other.photon_starved,
            ..self.clone()
        })
    }
}

/// `count` angles evenly spaced over `[0, π)`.
pub fn uniform_angles(count: usize) -> Vec<f64> {
    (0..count).map(|k| PI * k as f64 / count as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ellipse {
    /// Centre in normalized coordinates, the image spanning `[−1, 1]²`
    /// (`x` to the right, `y` downwards).
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    /// Rotation of the first axis in radians.
    pub rotation: f64,
    /// Additive attenuation inside the ellipse.
    pub value: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (c, s) = (libm::cos(self.rotation), libm::sin(self.rotation));
        let u = (c * dx + s * dy) / self.semi_axes.0;
        let v = (-s * dx + c * dy) / self.semi_axes.1;
        u * u + v * v <= 1.0
    }

    /// Area in normalized units.
    pub fn area(&self) -> f64 {
        PI * self.semi_axes.0 * self.semi_axes.1
    }
}

/// Rasterizes additive ellipses by pixel-centre membership.
pub fn rasterize(ellipses: &[Ellipse], size: usize) -> Image {
    Image::from_fn(size, size, |r, c| {
        let x = 2.0 * (c as f64 + 0.5) / size as f64 - 1.0;
        let y = 2.0 * (r as f64 + 0.5) / size as f64 - 1.0;
        ellipses
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.value)
            .sum()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PhantomKind {
    Empty,
    /// Uniform water disk of radius 0.8.
    Disk,
    TwoEllipse,
    SheppLogan,
    /// Randomized body section with lungs, spine, organs and small lesions.
    Organs {
        seed: u64,
    },
}

pub const MIN_PHANTOM_SIZE: usize = 32;

fn ellipse(cx: f64, cy: f64, a: f64, b: f64, deg: f64, value: f64) -> Ellipse {
    Ellipse {
        center: (cx, cy),
        semi_axes: (a, b),
        rotation: deg.to_radians(),
        value,
    }
}

pub fn two_ellipse() -> Vec<Ellipse> {
    vec![
        ellipse(0.0, 0.0, 0.8, 0.6, 0.0, 1.0),
        ellipse(0.2, -0.1, 0.3, 0.2, 30.0, 0.5),
    ]
}

/// Shepp–Logan layout with contrasts enlarged so the soft-tissue ellipses are
/// visible in water-relative units.
pub fn shepp_logan() -> Vec<Ellipse> {
    vec![
        ellipse(0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
        ellipse(0.0, 0.0184, 0.6624, 0.874, 0.0, -0.2),
        ellipse(0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
        ellipse(-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
        ellipse(0.0, -0.35, 0.21, 0.25, 0.0, 0.1),
        ellipse(0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
        ellipse(0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
        ellipse(-0.08, 0.605, 0.046, 0.023, 0.0, 0.1),
        ellipse(0.0, 0.605, 0.023, 0.023, 0.0, 0.1),
        ellipse(0.06, 0.605, 0.023, 0.046, 0.0, 0.1),
    ]
}

pub fn organ_ellipses(seed: u64) -> Vec<Ellipse> {
    let mut rng = rng::seeded(seed);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let a = u(0.78, 0.9);
    let b = u(0.6, 0.75);
    let mut out = vec![ellipse(0.0, 0.0, a, b, u(-5.0, 5.0), 1.0)];
    // lungs
    let lung_x = u(0.3, 0.4) * a;
    let lung_y = u(-0.25, -0.1);
    let (la, lb) = (u(0.15, 0.22), u(0.25, 0.35));
    out.push(ellipse(-lung_x, lung_y, la, lb, u(-15.0, 0.0), -0.75));
    out.push(ellipse(lung_x, lung_y, la, lb, u(0.0, 15.0), -0.75));
    // spine
    out.push(ellipse(
        0.0,
        0.75 * b,
        u(0.07, 0.1),
        u(0.07, 0.1),
        0.0,
        u(0.7, 0.9),
    ));
    // soft-tissue organs
    let organs = 2 + (u(0.0, 3.0) as usize);
    for _ in 0..organs {
        let r = u(0.0, 0.45);
        let t = u(0.0, 2.0 * PI);
        let cx = r * a * libm::cos(t);
        let cy = 0.25 + 0.5 * r * b * libm::sin(t);
        let sign = if u(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
        out.push(ellipse(
            cx,
            cy,
            u(0.08, 0.2),
            u(0.06, 0.15),
            u(0.0, 180.0),
            sign * u(0.08, 0.25),
        ));
    }
    // lesions
    let lesions = 2 + (u(0.0, 3.0) as usize);
    for _ in 0..lesions {
        let r = u(0.0, 0.6);
        let t = u(0.0, 2.0 * PI);
        let sign = if u(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
        let radius = u(0.03, 0.07);
        out.push(ellipse(
            r * a * libm::cos(t),
            r * b * libm::sin(t),
            radius,
            radius * u(0.7, 1.0),
            0.0,
            sign * u(0.1, 0.3),
        ));
    }
    out
}

pub fn make_phantom(kind: PhantomKind, size: usize) -> Result<Image> {
    if size < MIN_PHANTOM_SIZE {
        return Err(invalid!("phantom size {size} is below {MIN_PHANTOM_SIZE}"));
    }
    let ellipses = match kind {
        PhantomKind::Empty => return Ok(Image::zeros(size, size)),
        PhantomKind::Disk => vec![ellipse(0.0, 0.0, 0.8, 0.8, 0.0, 1.0)],
        PhantomKind::TwoEllipse => two_ellipse(),
        PhantomKind::SheppLogan => shepp_logan(),
        PhantomKind::Organs { seed } => organ_ellipses(seed),
    };
    Ok(rasterize(&ellipses, size))
}

fn bilinear(x: &Image, px: f64, py: f64) -> f64 {
    let (h, w) = x.dims();
    let (fx, fy) = (libm::floor(px), libm::floor(py));
    let (tx, ty) = (px - fx, py - fy);
    let (c0, r0) = (fx as isize, fy as isize);
    let sample = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            x.get(r as usize, c as usize)
        }
    };
    (1.0 - ty) * ((1.0 - tx) * sample(r0, c0) + tx * sample(r0, c0 + 1))
        + ty * ((1.0 - tx) * sample(r0 + 1, c0) + tx * sample(r0 + 1, c0 + 1))
}

/// Ray-marching step in pixels.
pub const MARCH_STEP: f64 = 0.5;

/// Parallel-beam line integrals. Detector bins are one pixel wide and centred
/// on the image centre; the ray for angle `θ` and offset `t` is
/// `{(x, y) : x cos θ + y sin θ = t}` with `x` along columns and `y` along rows.
pub fn project(x: &Image, angles: &[f64], bins: usize) -> Result<Sinogram> {
    if angles.is_empty() || bins == 0 {
        return Err(invalid!("projection needs at least one angle and one bin"));
    }
    let (h, w) = x.dims();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let half = 0.5 * libm::sqrt((h * h + w * w) as f64) + 1.0;
    let steps = (2.0 * half / MARCH_STEP) as usize + 1;
    let mut data = Vec::with_capacity(angles.len() * bins);
    for &theta in angles {
        let (c, s) = (libm::cos(theta), libm::sin(theta));
        for b in 0..bins {
            let t = b as f64 - (bins as f64 - 1.0) / 2.0;
            let mut acc = 0.0;
            for k in 0..steps {
                let along = -half + k as f64 * MARCH_STEP;
                let px = t * c - along * s;
                let py = t * s + along * c;
                acc += bilinear(x, px + cx, py + cy);
            }
            data.push(acc * MARCH_STEP);
        }
    }
    Sinogram::new(angles.to_vec(), bins, data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DoseConfig {
    /// Incident photons per bin at full dose.
    pub incident_photons: f64,
    pub fraction: f64,
}

impl DoseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(invalid!(
                "dose fraction must lie in (0, 1], got {}",
                self.fraction
            ));
        }
        if !(self.incident_photons * self.fraction >= 1.0) {
            return Err(invalid!("fewer than one incident photon per bin"));
        }
        Ok(())
    }
}

/// Redraws each bin as Poisson counts `N̂ ~ Poisson(I₀·fraction·e^{−s·p})`
/// and returns `−ln(max(N̂, 1)/(I₀·fraction))/s`, where `s` converts the stored
/// line integral to optical depth.
pub fn apply_low_dose(
    sino: &Sinogram,
    dose: &DoseConfig,
    depth_scale: f64,
    seed: u64,
) -> Result<Sinogram> {
    dose.validate()?;
    if !(depth_scale > 0.0) {
        return Err(invalid!("optical depth scale must be positive"));
    }
    let flux = dose.incident_photons * dose.fraction;
    let mut rng = rng::seeded(seed);
    let mut starved = false;
    let mut data = Vec::with_capacity(sino.data.len());
    for &p in &sino.data {
        let expected = flux * libm::exp(-depth_scale * p);
        if expected < 1.0 {
            starved = true;
        }
        let counts = if expected > 0.0 {
            Poisson::new(expected)
                .map_err(|e| numeric!("poisson rate {expected}: {e}"))?
                .sample(&mut rng)
        } else {
            0.0
        };
        data.push(-libm::log(counts.max(1.0) / flux) / depth_scale);
    }
    let mut out = Sinogram::new(sino.angles.clone(), sino.bins, data)?;
    out.photon_starved = starved || sino.photon_starved;
    Ok(out)
}

pub const MIN_FBP_ANGLES: usize = 8;

/// Ram-Lak filter samples for unit bin spacing, indices `−(n−1)..=(n−1)`.
fn ramp_kernel(n: usize) -> Vec<f64> {
    (0..2 * n - 1)
        .map(|i| {
            let k = i as isize - (n as isize - 1);
            if k == 0 {
                0.25
            } else if k % 2 == 0 {
                0.0
            } else {
                -1.0 / (PI * PI * (k * k) as f64)
            }
        })
        .collect()
}

/// Ramp-filtered backprojection onto a `size×size` grid, assuming the angles
/// are evenly spread over `[0, π)`.
pub fn fbp(sino: &Sinogram, size: usize) -> Result<Image> {
    let k = sino.angles.len();
    if k < MIN_FBP_ANGLES {
        return Err(invalid!(
            "{k} angles are too few for filtered backprojection (need {MIN_FBP_ANGLES})"
        ));
    }
    if size == 0 {
        return Err(invalid!("output size must be positive"));
    }
    let n = sino.bins;
    let kernel = ramp_kernel(n);
    let mut filtered = vec![0.0; k * n];
    for a in 0..k {
        let row = sino.row(a);
        for i in 0..n {
            let mut acc = 0.0;
            for (j, p) in row.iter().enumerate() {
                acc += p * kernel[i + n - 1 - j];
            }
            filtered[a * n + i] = acc;
        }
    }
    let centre = (size as f64 - 1.0) / 2.0;
    let bin_centre = (n as f64 - 1.0) / 2.0;
    let trig: Vec<(f64, f64)> = sino
        .angles
        .iter()
        .map(|&t| (libm::cos(t), libm::sin(t)))
        .collect();
    let weight = PI / k as f64;
    Ok(Image::from_fn(size, size, |r, c| {
        let (x, y) = (c as f64 - centre, r as f64 - centre);
        let mut acc = 0.0;
        for (a, &(ct, st)) in trig.iter().enumerate() {
            let pos = x * ct + y * st + bin_centre;
            let i0 = libm::floor(pos);
            let frac = pos - i0;
            let i0 = i0 as isize;
            let row = &filtered[a * n..(a + 1) * n];
            let at = |i: isize| {
                if i < 0 || i >= n as isize {
                    0.0
                } else {
                    row[i as usize]
                }
            };
            acc += (1.0 - frac) * at(i0) + frac * at(i0 + 1);
        }
        acc * weight
    }))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DatasetConfig {
    pub size: usize,
    pub angles: usize,
    pub bins: usize,
    pub dose_fractions: Vec<f64>,
    pub count: usize,
    pub seed: u64,
    pub incident_photons: f64,
    pub geometry: Geometry,
    /// Peak used for PSNR on these images.
    pub peak: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            size: 64,
            angles: 180,
            bins: 96,
            dose_fractions: vec![0.13, 0.25, 0.5],
            count: 16,
            seed: 1,
            incident_photons: 1e5,
            geometry: Geometry::default(),
            peak: 2.0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(invalid!("dataset count must be at least 1"));
        }
        if self.size < MIN_PHANTOM_SIZE {
            return Err(invalid!(
                "image size {} is below {MIN_PHANTOM_SIZE}",
                self.size
            ));
        }
        if self.angles < MIN_FBP_ANGLES || self.bins == 0 {
            return Err(invalid!(
                "need at least {MIN_FBP_ANGLES} angles and one bin"
            ));
        }
        if self.dose_fractions.is_empty() {
            return Err(invalid!("no dose fractions"));
        }
        for &fraction in &self.dose_fractions {
            DoseConfig {
                incident_photons: self.incident_photons,
                fraction,
            }
            .validate()?;
        }
        if !(self.peak > 0.0) {
            return Err(invalid!("peak must be positive"));
        }
        Ok(())
    }
}

/// One phantom at one dose.
#[derive(Debug, Clone, PartialEq)]
pub struct CtSample {
    pub index: usize,
    pub seed: u64,
    pub fraction: f64,
    pub phantom: Image,
    /// FBP of the Poisson-resampled sinogram.
    pub low_dose: Image,
    /// FBP of the noiseless sinogram.
    pub routine_dose: Image,
    pub photon_starved: bool,
}

/// Seed of the `index`-th phantom.
pub fn sample_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Simulates one phantom at every configured dose.
pub fn make_samples(cfg: &DatasetConfig, index: usize) -> Result<Vec<CtSample>> {
    let seed = sample_seed(cfg.seed, index);
    let phantom = make_phantom(PhantomKind::Organs { seed }, cfg.size)?;
    let angles = uniform_angles(cfg.angles);
    let clean = project(&phantom, &angles, cfg.bins)?;
    let routine_dose = fbp(&clean, cfg.size)?;
    let scale = cfg.geometry.optical_depth_scale(cfg.size);
    cfg.dose_fractions
        .iter()
        .enumerate()
        .map(|(j, &fraction)| {
            let dose = DoseConfig {
                incident_photons: cfg.incident_photons,
                fraction,
            };
            let noisy = apply_low_dose(&clean, &dose, scale, rng::derive_seed(seed, j as u64))?;
            Ok(CtSample {
                index,
                seed,
                fraction,
                phantom: phantom.clone(),
                low_dose: fbp(&noisy, cfg.size)?,
                routine_dose: routine_dose.clone(),
                photon_starved: noisy.photon_starved,
            })
        })
        .collect()
}

/// All samples, phantom-major then dose. Each phantom uses seed
/// `cfg.seed + index`, so the result does not depend on thread count.
pub fn make_dataset(cfg: &DatasetConfig) -> Result<Vec<CtSample>> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    let per_index: Vec<Result<Vec<CtSample>>> = {
        use rayon::prelude::*;
        (0..cfg.count)
            .into_par_iter()
            .map(|i| make_samples(cfg, i))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_index: Vec<Result<Vec<CtSample>>> =
        (0..cfg.count).map(|i| make_samples(cfg, i)).collect();
    let mut out = Vec::with_capacity(cfg.count * cfg.dose_fractions.len());
    for samples in per_index {
        out.extend(samples?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_phantom_and_size_check() {
        assert!(make_phantom(PhantomKind::Empty, 32)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(make_phantom(PhantomKind::Disk, 16).is_err());
    }

    #[test]
    fn zero_image_projects_and_reconstructs_to_zero() {
        let angles = uniform_angles(16);
        let s = project(&Image::zeros(32, 32), &angles, 48).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
        assert!(fbp(&s, 32).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_angles() {
        let s = Sinogram::new(uniform_angles(4), 8, vec![0.0; 32]).unwrap();
        assert!(fbp(&s, 32).is_err());
    }

    #[test]
    fn dose_validation() {
        assert!(DoseConfig {
            incident_photons: 1e5,
            fraction: 0.0
        }
        .validate()
        .is_err());
        assert!(DoseConfig {
            incident_photons: 0.5,
            fraction: 1.0
        }
        .validate()
        .is_err());
        let cfg = DatasetConfig {
            count: 0,
            ..Default::default()
        };
        assert!(make_dataset(&cfg).is_err());
    }
}
