//! Singular spectra of module feature maps, read through extended Hankel
//! matrices.

use alloc::vec::Vec;

use super::network::{Mode, Network};
use super::tensor::Tensor;
use crate::error::{invalid, Result};
use crate::hankel;
use crate::image::{Image, SubbandStack};
use crate::linalg::{self, Matrix};

/// Window used for the extended Hankel matrix of a feature map.
pub const SPECTRUM_WINDOW: (usize, usize) = (3, 3);

/// Normalized descending singular values of the extended Hankel matrix
/// built from `channels`, each channel mean-centred first. The largest
/// value is 1; an all-zero input gives all zeros.
///
/// Singular values come from the Gram matrix, which is small when there are
/// far more pixels than channel-window columns.
pub fn feature_spectrum(channels: &[Image], window: (usize, usize)) -> Result<Vec<f64>> {
    let centred: Vec<Image> = channels
        .iter()
        .map(|c| {
            let m = c.mean();
            c.map(|v| v - m)
        })
        .collect();
    let h = hankel::build_extended_hankel_2d(&centred, window)?;
    let a = h.matrix();
    let (rows, cols) = (a.rows(), a.cols());
    let mut gram = Matrix::zeros(cols, cols);
    let at = a.transpose();
    for i in 0..cols {
        let ci = at.row(i);
        for j in i..cols {
            let v = linalg::dot(ci, at.row(j));
            gram.set(i, j, v);
            gram.set(j, i, v);
        }
    }
    debug_assert!(rows >= 1);
    let mut s: Vec<f64> = linalg::singular_values(&gram)?
        .into_iter()
        .map(libm::sqrt)
        .collect();
    let top = s.first().copied().unwrap_or(0.0);
    if top > 0.0 {
        s.iter_mut().for_each(|v| *v /= top);
    }
    Ok(s)
}

/// Fraction of the spectrum's mass carried by the values at index
/// `len / 2` and beyond. Zero for an all-zero spectrum.
pub fn tail_mass(spectrum: &[f64]) -> f64 {
    let total: f64 = spectrum.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    spectrum[spectrum.len() / 2..].iter().sum::<f64>() / total
}

/// Spectrum of every module output for one coefficient stack, first module
/// first. The network runs in inference mode on the whole stack.
pub fn module_spectra(
    net: &Network,
    stack: &SubbandStack,
    window: (usize, usize),
) -> Result<Vec<Vec<f64>>> {
    let arch = net.arch();
    if stack.band_count() != arch.in_bands {
        return Err(invalid!(
            "stack has {} bands, network expects {}",
            stack.band_count(),
            arch.in_bands
        ));
    }
    let (h, w) = stack.dims();
    let x = Tensor::from_vec(1, arch.in_bands, h, w, stack.to_flat())?;
    let mut scratch = net.clone();
    let cache = scratch.forward_cached(&x, Mode::Inference)?;
    cache
        .module_outputs()
        .into_iter()
        .map(|t| {
            let channels: Vec<Image> = (0..t.c)
                .map(|ch| Image::new(h, w, t.plane(0, ch).to_vec()))
                .collect::<Result<_>>()?;
            feature_spectrum(&channels, window)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_features_give_zero_spectrum() {
        let s = feature_spectrum(&[Image::zeros(8, 8), Image::zeros(8, 8)], (3, 3)).unwrap();
        assert_eq!(s.len(), 18);
        assert!(s.iter().all(|&v| v == 0.0));
        assert_eq!(tail_mass(&s), 0.0);
    }

    #[test]
    fn spectrum_is_normalized_and_descending() {
        let ch = [Image::from_fn(10, 12, |r, c| {
            libm::sin(r as f64 * 0.7 + c as f64 * 1.3) + (r * c % 5) as f64
        })];
        let s = feature_spectrum(&ch, (3, 3)).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!(s.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn tail_mass_of_flat_spectrum_is_half() {
        assert!((tail_mass(&[1.0; 8]) - 0.5).abs() < 1e-15);
        assert_eq!(tail_mass(&[1.0, 0.0, 0.0, 0.0]), 0.0);
    }
}
