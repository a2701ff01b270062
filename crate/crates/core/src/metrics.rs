//! RMSE, PSNR and SSIM.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::image::Image;

/// Value returned by [`psnr`] for identical images.
pub const PSNR_CAP: f64 = 200.0;

pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(libm::sqrt(s / a.len() as f64))
}

/// `20·log10(peak / rmse)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(invalid!("peak must be positive, got {peak}"));
    }
    let e = rmse(a, b)?;
    Ok(psnr_from_rmse(e, peak))
}

pub fn psnr_from_rmse(rmse: f64, peak: f64) -> f64 {
    if rmse <= 0.0 {
        return PSNR_CAP;
    }
    (20.0 * libm::log10(peak / rmse)).min(PSNR_CAP)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl SsimConfig {
    pub fn with_range(dynamic_range: f64) -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range,
        }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - c, (i % size) as f64 - c);
            libm::exp(-(x * x + y * y) / (2.0 * sigma * sigma))
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mean SSIM over all fully contained windows.
pub fn ssim(a: &Image, b: &Image, cfg: &SsimConfig) -> Result<f64> {
    a.check_same_dims(b)?;
    let (h, w) = a.dims();
    let k = cfg.window;
    if k == 0 || k > h || k > w {
        return Err(invalid!("window {k} does not fit a {h}x{w} image"));
    }
    if !(cfg.dynamic_range > 0.0 && cfg.sigma > 0.0) {
        return Err(invalid!("dynamic range and sigma must be positive"));
    }
    let c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
    let c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
    let win = gaussian_window(k, cfg.sigma);
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=h - k {
        for c0 in 0..=w - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..k {
                for dx in 0..k {
                    let wt = win[dy * k + dx];
                    let (x, y) = (a.get(r0 + dy, c0 + dx), b.get(r0 + dy, c0 + dx));
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MetricReport {
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub peak: f64,
}

pub fn report(estimate: &Image, reference: &Image, peak: f64) -> Result<MetricReport> {
    let e = rmse(estimate, reference)?;
    Ok(MetricReport {
        rmse: e,
        psnr: psnr(estimate, reference, peak)?,
        ssim: ssim(estimate, reference, &SsimConfig::with_range(peak))?,
        peak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_reference_points() {
        let a = Image::zeros(4, 4);
        assert!((psnr(&a, &Image::filled(4, 4, 2.0), 2.0).unwrap()).abs() < 1e-12);
        assert!((psnr(&a, &Image::filled(4, 4, 0.2), 2.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_window_check() {
        let a = Image::from_fn(12, 12, |r, c| (r * c) as f64 / 100.0);
        assert!((ssim(&a, &a, &SsimConfig::with_range(1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(
            &Image::zeros(8, 8),
            &Image::zeros(8, 8),
            &SsimConfig::with_range(1.0)
        )
        .is_err());
    }
}
