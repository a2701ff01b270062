//! Central-difference check of the hand-written gradients.

use alloc::vec::Vec;

use rand::seq::index;

use super::network::{Mode, Network};
use super::tensor::Tensor;
use crate::error::{invalid, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Coordinates to test; every coordinate when the network is smaller.
    pub coordinates: usize,
    pub seed: u64,
    /// Gradients below this magnitude on both sides compare absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            coordinates: 400,
            seed: 0,
            floor: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose perturbation moved some ReLU across its kink.
    pub skipped: usize,
    pub max_rel_error: f64,
}

fn loss_and_pattern(net: &Network, x: &Tensor, target: &Tensor) -> Result<(f64, Vec<bool>)> {
    let mut scratch = net.clone();
    let pattern = scratch.forward_cached(x, Mode::Train)?.relu_pattern();
    let mut scratch = net.clone();
    Ok((scratch.loss(x, target)?, pattern))
}

/// Compares `loss_and_grad` against `(L(p + ε) − L(p − ε)) / 2ε` on a sample
/// of coordinates. The relative error is `|a − n| / max(|a|, |n|)`, or the
/// absolute error divided by `floor` when both are below it.
pub fn gradient_check(
    net: &Network,
    x: &Tensor,
    target: &Tensor,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if !(cfg.epsilon > 0.0 && cfg.floor > 0.0) {
        return Err(invalid!("epsilon and floor must be positive"));
    }
    let (_, analytic) = net.clone().loss_and_grad(x, target)?;
    let (_, base) = loss_and_pattern(net, x, target)?;
    let n = analytic.len();
    let coords: Vec<usize> = if cfg.coordinates >= n {
        (0..n).collect()
    } else {
        let mut r = rng::seeded(cfg.seed);
        let mut v = index::sample(&mut r, n, cfg.coordinates).into_vec();
        v.sort_unstable();
        v
    };
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
    };
    let mut probe = net.clone();
    for i in coords {
        let p0 = probe.params()[i];
        probe.params_mut()[i] = p0 + cfg.epsilon;
        let (plus, pat_plus) = loss_and_pattern(&probe, x, target)?;
        probe.params_mut()[i] = p0 - cfg.epsilon;
        let (minus, pat_minus) = loss_and_pattern(&probe, x, target)?;
        probe.params_mut()[i] = p0;
        if pat_plus != base || pat_minus != base {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.epsilon);
        let a = analytic[i];
        let scale = libm::fmax(libm::fmax(libm::fabs(a), libm::fabs(numeric)), cfg.floor);
        report.max_rel_error = libm::fmax(report.max_rel_error, libm::fabs(a - numeric) / scale);
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavresnet::ArchConfig;

    #[test]
    fn small_network_passes() {
        let arch = ArchConfig {
            in_bands: 2,
            channels: 3,
            module_count: 1,
            convs_per_module: 1,
            kernel: 3,
            patch: (5, 5),
            input_scale: 1.0,
        };
        let net = Network::init(arch, 4).unwrap();
        let mut r = rng::seeded(9);
        let x = Tensor::from_vec(2, 2, 5, 5, rng::gaussian_vec(&mut r, 100, 1.0)).unwrap();
        let t = Tensor::from_vec(2, 2, 5, 5, rng::gaussian_vec(&mut r, 100, 0.1)).unwrap();
        let rep = gradient_check(&net, &x, &t, &GradCheckConfig::default()).unwrap();
        assert!(rep.checked > 0);
        assert!(rep.max_rel_error < 1e-3, "{rep:?}");
    }
}
