//! Whole-image inference: subband transform, overlapping patches through the
//! network, patch averaging and synthesis.

use alloc::vec::Vec;

use super::network::Network;
use super::tensor::Tensor;
use crate::directional::TransformPlan;
use crate::error::{invalid, Result};
use crate::image::{self, Image, SubbandStack};
use crate::km::Denoiser;

/// Patch stride used when none is given.
pub const DEFAULT_STRIDE: usize = 16;
const PATCH_BATCH: usize = 16;

/// Denoises a coefficient stack patch by patch and averages the overlaps.
pub fn denoise_stack(net: &Network, stack: &SubbandStack, stride: usize) -> Result<SubbandStack> {
    let arch = net.arch();
    if stack.band_count() != arch.in_bands {
        return Err(invalid!(
            "stack has {} bands, network expects {}",
            stack.band_count(),
            arch.in_bands
        ));
    }
    let set = image::extract_patches(stack, arch.patch, stride)?;
    let (ph, pw) = arch.patch;
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(set.len());
    for chunk in set.patches().chunks(PATCH_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * set.patch_len());
        for p in chunk {
            data.extend_from_slice(&p.values);
        }
        let x = Tensor::from_vec(chunk.len(), arch.in_bands, ph, pw, data)?;
        let y = net.forward(&x)?;
        for b in 0..chunk.len() {
            outputs.push(y.sample(b).to_vec());
        }
    }
    image::average_patches(&set.with_values(outputs)?)
}

/// Full image denoiser `Q`: forward transform, patch-wise network, inverse.
pub fn infer_image(net: &Network, plan: &TransformPlan, x: &Image, stride: usize) -> Result<Image> {
    let coeffs = plan.forward(x)?;
    plan.inverse(&denoise_stack(net, &coeffs, stride)?)
}

/// A trained network paired with a transform plan, usable as `Q` in the
/// fixed-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct NetworkDenoiser<'a> {
    pub net: &'a Network,
    pub plan: &'a TransformPlan,
    pub stride: usize,
}

impl Denoiser for NetworkDenoiser<'_> {
    fn denoise(&self, f: &Image) -> Result<Image> {
        infer_image(self.net, self.plan, f, self.stride)
    }
}
