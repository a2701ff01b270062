//! Architecture, parameter layout, forward pass and reverse-mode gradients.
//!
//! ```text
//! x ─ conv·BN·ReLU ─ F₀ ─ module₁ ─ … ─ module_M
//!                     │      │              │
//!                     └──────┴── concat ────┴─ conv·BN·ReLU ─ conv(+b) ─ R
//! output = x − R
//! module(u) = [conv·BN·ReLU]×k (u) + ReLU(conv(u) + b)
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{self, BnCache, ConvShape, Tensor};
use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ArchConfig {
    pub in_bands: usize,
    pub channels: usize,
    pub module_count: usize,
    pub convs_per_module: usize,
    /// Side of the square convolution kernels (odd).
    pub kernel: usize,
    /// Training and inference patch size `(rows, cols)`.
    pub patch: (usize, usize),
    /// Coefficients are multiplied by this before entering the network and
    /// the estimated residual is divided by it.
    pub input_scale: f64,
}

impl Default for ArchConfig {
    /// Desk scale on the fifteen-band transform.
    fn default() -> Self {
        Self::desk(15)
    }
}

impl ArchConfig {
    /// Desk-scale network: 16 channels, 3 modules, 33×33 patches.
    pub fn desk(in_bands: usize) -> Self {
        Self {
            in_bands,
            channels: 16,
            module_count: 3,
            convs_per_module: 3,
            kernel: 3,
            patch: (33, 33),
            input_scale: 20.0,
        }
    }

    /// Full-size network: 128 channels, 6 modules, 55×55 patches, 15 bands.
    pub fn full() -> Self {
        Self {
            in_bands: 15,
            channels: 128,
            module_count: 6,
            convs_per_module: 3,
            kernel: 3,
            patch: (55, 55),
            input_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("in_bands", self.in_bands),
            ("channels", self.channels),
            ("module_count", self.module_count),
            ("convs_per_module", self.convs_per_module),
            ("kernel", self.kernel),
            ("patch rows", self.patch.0),
            ("patch cols", self.patch.1),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(invalid!("{name} must be positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(invalid!("kernel size {} is not odd", self.kernel));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(invalid!("input scale must be positive"));
        }
        Ok(())
    }

    /// Input channel count of the fusion convolution.
    pub fn fusion_inputs(&self) -> usize {
        (self.module_count + 1) * self.channels
    }
}

/// One named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvSlot {
    pub shape: ConvShape,
    pub weight: usize,
    pub bias: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BnSlot {
    pub channels: usize,
    pub gamma: usize,
    pub beta: usize,
    /// Offset of the running mean; the running variance follows it.
    pub stats: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ModuleSlots {
    pub trunk: Vec<(ConvSlot, BnSlot)>,
    pub bypass: ConvSlot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<ParamEntry>,
    param_len: usize,
    stats_len: usize,
    pub(crate) input: (ConvSlot, BnSlot),
    pub(crate) modules: Vec<ModuleSlots>,
    pub(crate) fusion: (ConvSlot, BnSlot),
    pub(crate) output: ConvSlot,
}

struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    len: usize,
    stats: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let len = shape.iter().product();
        let offset = self.len;
        self.entries.push(ParamEntry {
            name,
            shape,
            offset,
            len,
        });
        self.len += len;
        offset
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: bool) -> ConvSlot {
        let weight = self.push(format!("{name}.weight"), vec![cout, cin, k, k]);
        let bias = if bias {
            Some(self.push(format!("{name}.bias"), vec![cout]))
        } else {
            None
        };
        ConvSlot {
            shape: ConvShape { cin, cout, k },
            weight,
            bias,
        }
    }

    fn bn(&mut self, name: &str, channels: usize) -> BnSlot {
        let gamma = self.push(format!("{name}.gamma"), vec![channels]);
        let beta = self.push(format!("{name}.beta"), vec![channels]);
        let stats = self.stats;
        self.stats += 2 * channels;
        BnSlot {
            channels,
            gamma,
            beta,
            stats,
        }
    }
}

impl Layout {
    pub fn new(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let (b, c, k) = (arch.in_bands, arch.channels, arch.kernel);
        let mut lb = LayoutBuilder {
            entries: Vec::new(),
            len: 0,
            stats: 0,
        };
        let input = (lb.conv("input.conv", b, c, k, false), lb.bn("input.bn", c));
        let modules = (0..arch.module_count)
            .map(|m| {
                let trunk = (0..arch.convs_per_module)
                    .map(|j| {
                        (
                            lb.conv(&format!("module{m}.conv{j}"), c, c, k, false),
                            lb.bn(&format!("module{m}.bn{j}"), c),
                        )
                    })
                    .collect();
                let bypass = lb.conv(&format!("module{m}.bypass"), c, c, k, true);
                ModuleSlots { trunk, bypass }
            })
            .collect();
        let fusion = (
            lb.conv("fusion.conv", arch.fusion_inputs(), c, k, false),
            lb.bn("fusion.bn", c),
        );
        let output = lb.conv("output.conv", c, b, k, true);
        Ok(Self {
            entries: lb.entries,
            param_len: lb.len,
            stats_len: lb.stats,
            input,
            modules,
            fusion,
            output,
        })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn param_len(&self) -> usize {
        self.param_len
    }

    pub fn stats_len(&self) -> usize {
        self.stats_len
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn bn_slots(&self) -> Vec<BnSlot> {
        let mut out = vec![self.input.1];
        for m in &self.modules {
            out.extend(m.trunk.iter().map(|(_, bn)| *bn));
        }
        out.push(self.fusion.1);
        out
    }
}

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: ArchConfig,
    layout: Layout,
    params: Vec<f64>,
    /// Running mean and variance of every normalization layer.
    stats: Vec<f64>,
}

/// Whether normalization uses batch statistics (and updates the running
/// averages) or the stored running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor,
    bn: BnCache,
    out: Tensor,
}

#[derive(Debug, Clone)]
struct ModuleCache {
    input: Tensor,
    trunk: Vec<BlockCache>,
    bypass_out: Tensor,
    out: Tensor,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input_block: BlockCache,
    modules: Vec<ModuleCache>,
    fusion: BlockCache,
    residual: Tensor,
}

impl ForwardCache {
    /// Initial feature map `F₀`.
    pub fn initial_features(&self) -> &Tensor {
        &self.input_block.out
    }

    /// Output feature map of each module.
    pub fn module_outputs(&self) -> Vec<&Tensor> {
        self.modules.iter().map(|m| &m.out).collect()
    }

    /// Input of the fusion convolution.
    pub fn fusion_input(&self) -> &Tensor {
        &self.fusion.input
    }

    pub fn residual(&self) -> &Tensor {
        &self.residual
    }

    /// Signs of every pre-activation feeding a ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        let mut push = |t: &Tensor| out.extend(t.data.iter().map(|&v| v > 0.0));
        push(&self.input_block.out);
        for m in &self.modules {
            for b in &m.trunk {
                push(&b.out);
            }
            push(&m.bypass_out);
        }
        push(&self.fusion.out);
        out
    }
}

impl Network {
    /// Gaussian weights (std [`INIT_STD`]), zero biases, unit scales.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        let layout = Layout::new(&arch)?;
        let mut params = vec![0.0; layout.param_len];
        let mut rng = rng::seeded(seed);
        for e in &layout.entries {
            let slot = &mut params[e.offset..e.offset + e.len];
            if e.name.ends_with(".weight") {
                slot.copy_from_slice(&rng::gaussian_vec(&mut rng, e.len, INIT_STD));
            } else if e.name.ends_with(".gamma") {
                slot.fill(1.0);
            }
        }
        let mut net = Self {
            stats: vec![0.0; layout.stats_len],
            arch,
            layout,
            params,
        };
        net.reset_running_stats();
        Ok(net)
    }

    pub fn from_parts(arch: ArchConfig, params: Vec<f64>, stats: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&arch)?;
        if params.len() != layout.param_len || stats.len() != layout.stats_len {
            return Err(invalid!(
                "expected {} parameters and {} statistics, got {} and {}",
                layout.param_len,
                layout.stats_len,
                params.len(),
                stats.len()
            ));
        }
        if params.iter().chain(&stats).any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure("non-finite parameter".into()));
        }
        Ok(Self {
            arch,
            layout,
            params,
            stats,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[f64] {
        &self.stats
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .entry(name)
            .map(|e| &self.params[e.offset..e.offset + e.len])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let e = self.layout.entry(name)?.clone();
        Some(&mut self.params[e.offset..e.offset + e.len])
    }

    /// Running means 0, variances 1.
    pub fn reset_running_stats(&mut self) {
        for bn in self.layout.bn_slots() {
            self.stats[bn.stats..bn.stats + bn.channels].fill(0.0);
            self.stats[bn.stats + bn.channels..bn.stats + 2 * bn.channels].fill(1.0);
        }
    }

    /// Zeroes the last convolution so the network returns its input.
    pub fn zero_output_layer(&mut self) {
        let out = self.layout.output;
        self.params[out.weight..out.weight + out.shape.weight_len()].fill(0.0);
        if let Some(b) = out.bias {
            self.params[b..b + out.shape.cout].fill(0.0);
        }
    }

    /// Rounds every parameter and statistic to single precision.
    pub fn quantize_f32(&mut self) {
        for v in self.params.iter_mut().chain(self.stats.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c != self.arch.in_bands {
            return Err(invalid!(
                "input has {} bands, network expects {}",
                x.c,
                self.arch.in_bands
            ));
        }
        if x.n == 0 {
            return Err(invalid!("empty batch"));
        }
        let r = self.arch.kernel / 2;
        if x.h <= r || x.w <= r {
            return Err(invalid!(
                "input {}x{} is too small for a {}-tap kernel",
                x.h,
                x.w,
                self.arch.kernel
            ));
        }
        Ok(())
    }

    fn conv(&self, slot: &ConvSlot, x: &Tensor) -> Tensor {
        let w = &self.params[slot.weight..slot.weight + slot.shape.weight_len()];
        let b = slot.bias.map(|o| &self.params[o..o + slot.shape.cout]);
        tensor::conv_forward(x, slot.shape, w, b)
    }

    fn block(&mut self, conv: &ConvSlot, bn: &BnSlot, x: Tensor, mode: Mode) -> BlockCache {
        let pre = self.conv(conv, &x);
        let c = bn.channels;
        let gamma = &self.params[bn.gamma..bn.gamma + c];
        let beta = &self.params[bn.beta..bn.beta + c];
        let (y, cache) = match mode {
            Mode::Train => tensor::bn_forward(&pre, gamma, beta, None),
            Mode::Inference => {
                let (m, v) = self.stats[bn.stats..bn.stats + 2 * c].split_at(c);
                tensor::bn_forward(&pre, gamma, beta, Some((m, v)))
            }
        };
        if mode == Mode::Train {
            let count = (pre.n * pre.plane_len()) as f64;
            let unbias = if count > 1.0 {
                count / (count - 1.0)
            } else {
                1.0
            };
            for ch in 0..c {
                let m = &mut self.stats[bn.stats + ch];
                *m = tensor::BN_MOMENTUM * *m + (1.0 - tensor::BN_MOMENTUM) * cache.batch_mean[ch];
                let v = &mut self.stats[bn.stats + c + ch];
                *v = tensor::BN_MOMENTUM * *v
                    + (1.0 - tensor::BN_MOMENTUM) * cache.batch_var[ch] * unbias;
            }
        }
        BlockCache {
            input: x,
            out: tensor::relu(&y),
            bn: cache,
        }
    }

    /// Runs the network on `input_scale · x` and returns the cache. The cached
    /// residual is in scaled units. Training mode updates the running
    /// statistics.
    pub fn forward_cached(&mut self, x: &Tensor, mode: Mode) -> Result<ForwardCache> {
        self.check_input(x)?;
        let layout = self.layout.clone();
        let mut xs = x.clone();
        if self.arch.input_scale != 1.0 {
            xs.data.iter_mut().for_each(|v| *v *= self.arch.input_scale);
        }
        let input_block = self.block(&layout.input.0, &layout.input.1, xs, mode);
        check_finite(&input_block.out, "input block")?;
        let mut modules: Vec<ModuleCache> = Vec::with_capacity(layout.modules.len());
        for (m, slots) in layout.modules.iter().enumerate() {
            let input = match modules.last() {
                Some(prev) => prev.out.clone(),
                None => input_block.out.clone(),
            };
            let mut trunk: Vec<BlockCache> = Vec::with_capacity(slots.trunk.len());
            for (conv, bn) in &slots.trunk {
                let src = trunk
                    .last()
                    .map(|b| b.out.clone())
                    .unwrap_or_else(|| input.clone());
                trunk.push(self.block(conv, bn, src, mode));
            }
            let bypass_out = tensor::relu(&self.conv(&slots.bypass, &input));
            let mut out = trunk
                .last()
                .map(|b| b.out.clone())
                .unwrap_or_else(|| input.clone());
            out.add_assign(&bypass_out);
            check_finite(&out, &format!("module {m}"))?;
            modules.push(ModuleCache {
                input,
                trunk,
                bypass_out,
                out,
            });
        }
        let mut parts: Vec<&Tensor> = vec![&input_block.out];
        parts.extend(modules.iter().map(|m| &m.out));
        let concat = Tensor::concat_channels(&parts);
        let fusion = self.block(&layout.fusion.0, &layout.fusion.1, concat, mode);
        check_finite(&fusion.out, "fusion block")?;
        let residual = self.conv(&layout.output, &fusion.out);
        check_finite(&residual, "output layer")?;
        Ok(ForwardCache {
            input_block,
            modules,
            fusion,
            residual,
        })
    }

    /// Estimated residual `R(x)` in inference mode.
    pub fn residual(&self, x: &Tensor) -> Result<Tensor> {
        let mut scratch = self.clone();
        let mut r = scratch.forward_cached(x, Mode::Inference)?.residual;
        let s = self.arch.input_scale;
        if s != 1.0 {
            r.data.iter_mut().for_each(|v| *v /= s);
        }
        Ok(r)
    }

    /// Denoised output `x − R(x)` in inference mode.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let r = self.residual(x)?;
        let data = x.data.iter().zip(&r.data).map(|(a, b)| a - b).collect();
        Tensor::from_vec(x.n, x.c, x.h, x.w, data)
    }

    /// Mean squared error between `R(x)` and `target`, both in scaled units,
    /// with its gradient with respect to every parameter. Uses batch
    /// statistics and updates the running averages.
    pub fn loss_and_grad(&mut self, x: &Tensor, target: &Tensor) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_cached(x, Mode::Train)?;
        if !cache.residual.same_shape(target) {
            return Err(invalid!("target shape does not match the network output"));
        }
        let s = self.arch.input_scale;
        let count = target.data.len() as f64;
        let mut loss = 0.0;
        let mut grad_r = cache.residual.clone();
        for (g, t) in grad_r.data.iter_mut().zip(&target.data) {
            let d = *g - s * t;
            loss += d * d;
            *g = 2.0 * d / count;
        }
        let grad = self.backward(&cache, &grad_r);
        Ok((loss / count, grad))
    }

    /// Training-mode loss only.
    pub fn loss(&mut self, x: &Tensor, target: &Tensor) -> Result<f64> {
        let cache = self.forward_cached(x, Mode::Train)?;
        if !cache.residual.same_shape(target) {
            return Err(invalid!("target shape does not match the network output"));
        }
        let s = self.arch.input_scale;
        let sum: f64 = cache
            .residual
            .data
            .iter()
            .zip(&target.data)
            .map(|(a, b)| (a - s * b) * (a - s * b))
            .sum();
        Ok(sum / target.data.len() as f64)
    }

    fn conv_back(
        &self,
        slot: &ConvSlot,
        x: &Tensor,
        g: &Tensor,
        grad: &mut [f64],
        need_input: bool,
    ) -> Option<Tensor> {
        let wl = slot.shape.weight_len();
        let w = &self.params[slot.weight..slot.weight + wl];
        match slot.bias {
            Some(bo) => {
                // the bias is stored right after the weights
                debug_assert_eq!(bo, slot.weight + wl);
                let (gw, rest) = grad[slot.weight..].split_at_mut(wl);
                let gb = &mut rest[..slot.shape.cout];
                tensor::conv_backward(x, slot.shape, w, g, gw, Some(gb), need_input)
            }
            None => tensor::conv_backward(
                x,
                slot.shape,
                w,
                g,
                &mut grad[slot.weight..slot.weight + wl],
                None,
                need_input,
            ),
        }
    }

    fn block_back(
        &self,
        conv: &ConvSlot,
        bn: &BnSlot,
        cache: &BlockCache,
        g: &Tensor,
        grad: &mut [f64],
        need_input: bool,
    ) -> Option<Tensor> {
        let g = tensor::relu_backward(&cache.out, g);
        let c = bn.channels;
        let gamma = &self.params[bn.gamma..bn.gamma + c];
        let mut gg = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        let g = tensor::bn_backward(&cache.bn, gamma, &g, &mut gg, &mut gbeta);
        for ch in 0..c {
            grad[bn.gamma + ch] += gg[ch];
            grad[bn.beta + ch] += gbeta[ch];
        }
        self.conv_back(conv, &cache.input, &g, grad, need_input)
    }

    fn backward(&self, cache: &ForwardCache, grad_r: &Tensor) -> Vec<f64> {
        let layout = &self.layout;
        let mut grad = vec![0.0; layout.param_len];
        let g_fusion = self
            .conv_back(&layout.output, &cache.fusion.out, grad_r, &mut grad, true)
            .expect("input gradient");
        let g_concat = self
            .block_back(
                &layout.fusion.0,
                &layout.fusion.1,
                &cache.fusion,
                &g_fusion,
                &mut grad,
                true,
            )
            .expect("input gradient");
        let counts = vec![self.arch.channels; self.arch.module_count + 1];
        let mut parts = g_concat.split_channels(&counts);
        // parts[0] feeds F₀, parts[m + 1] module m's output.
        let mut carry: Option<Tensor> = None;
        for (m, (slots, mc)) in layout.modules.iter().zip(&cache.modules).enumerate().rev() {
            let mut g_out = core::mem::replace(&mut parts[m + 1], Tensor::zeros(0, 0, 0, 0));
            if let Some(c) = carry.take() {
                g_out.add_assign(&c);
            }
            let g_bypass = tensor::relu_backward(&mc.bypass_out, &g_out);
            let mut g_in = self
                .conv_back(&slots.bypass, &mc.input, &g_bypass, &mut grad, true)
                .expect("input gradient");
            let mut g = g_out;
            for (j, (conv, bn)) in slots.trunk.iter().enumerate().rev() {
                g = self
                    .block_back(conv, bn, &mc.trunk[j], &g, &mut grad, true)
                    .expect("input gradient");
            }
            g_in.add_assign(&g);
            carry = Some(g_in);
        }
        let mut g0 = core::mem::replace(&mut parts[0], Tensor::zeros(0, 0, 0, 0));
        if let Some(c) = carry {
            g0.add_assign(&c);
        }
        self.block_back(
            &layout.input.0,
            &layout.input.1,
            &cache.input_block,
            &g0,
            &mut grad,
            false,
        );
        grad
    }
}

fn check_finite(t: &Tensor, layer: &str) -> Result<()> {
    if t.data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFailure(format!(
            "non-finite activation in {layer}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ArchConfig {
        ArchConfig {
            in_bands: 2,
            channels: 3,
            module_count: 2,
            convs_per_module: 2,
            kernel: 3,
            patch: (6, 6),
            input_scale: 1.0,
        }
    }

    #[test]
    fn layout_counts() {
        let arch = ArchConfig::full();
        let layout = Layout::new(&arch).unwrap();
        assert_eq!(
            layout.entry("fusion.conv.weight").unwrap().shape,
            vec![128, 896, 3, 3]
        );
        assert_eq!(
            layout.entry("input.conv.weight").unwrap().shape,
            vec![128, 15, 3, 3]
        );
        assert_eq!(
            layout.entry("output.conv.weight").unwrap().shape,
            vec![15, 128, 3, 3]
        );
        let total: usize = layout.entries().iter().map(|e| e.len).sum();
        assert_eq!(total, layout.param_len());
    }

    #[test]
    fn invalid_arch() {
        let mut a = tiny();
        a.kernel = 2;
        assert!(Network::init(a, 0).is_err());
        let mut a = tiny();
        a.channels = 0;
        assert!(Network::init(a, 0).is_err());
    }

    #[test]
    fn wrong_band_count_is_rejected() {
        let net = Network::init(tiny(), 1).unwrap();
        assert!(net.forward(&Tensor::zeros(1, 3, 6, 6)).is_err());
    }

    #[test]
    fn zero_output_layer_is_identity() {
        let mut net = Network::init(tiny(), 2).unwrap();
        net.zero_output_layer();
        let mut rng = rng::seeded(5);
        let x = Tensor::from_vec(2, 2, 6, 6, rng::gaussian_vec(&mut rng, 144, 1.0)).unwrap();
        assert_eq!(net.forward(&x).unwrap(), x);
    }
}
