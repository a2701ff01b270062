//! SGD training with per-coordinate gradient clipping and the three-stage
//! curriculum:
//!
//! 1. base pairs: low-dose coefficients with the residual to routine dose;
//! 2. recursive pairs: the current network's own outputs on the low-dose
//!    inputs, regenerated every `refresh_epochs` and accumulated;
//! 3. identity pairs: routine-dose coefficients with a zero residual.
//!
//! Each stage keeps the sources of the stages before it. An epoch is
//! `ceil(base pairs / batch size)` steps regardless of the pool size.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::infer;
use super::network::Network;
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};
use crate::image::SubbandStack;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StageKind {
    Base,
    Recursive,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct StageConfig {
    pub kind: StageKind,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub lr_initial: f64,
    /// Learning rate at the last step; the rate decays geometrically.
    pub lr_final: f64,
    /// Gradient coordinates are clipped to `[−clip, clip]`.
    pub clip: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub stages: Vec<StageConfig>,
    /// Recursive pairs are regenerated every this many epochs.
    pub refresh_epochs: usize,
    pub flips: bool,
    /// Patch stride used when generating recursive pairs.
    pub inference_stride: usize,
    pub seed: u64,
    /// Training aborts once the loss exceeds this value.
    pub divergence_loss: f64,
}

impl Default for TrainConfig {
    /// Settings that train the desk-scale network in a few minutes: larger
    /// steps, momentum and a wider clip range than [`TrainConfig::full`].
    fn default() -> Self {
        Self {
            lr_initial: 0.1,
            lr_final: 0.01,
            clip: 0.1,
            momentum: 0.9,
            batch_size: 8,
            stages: vec![
                StageConfig {
                    kind: StageKind::Base,
                    epochs: 80,
                },
                StageConfig {
                    kind: StageKind::Recursive,
                    epochs: 40,
                },
                StageConfig {
                    kind: StageKind::Identity,
                    epochs: 20,
                },
            ],
            refresh_epochs: 20,
            flips: true,
            inference_stride: infer::DEFAULT_STRIDE,
            seed: 0,
            divergence_loss: 1e6,
        }
    }
}

impl TrainConfig {
    /// Plain SGD from 0.01 to 0.001 with gradients clipped to ±1e-3 and 50
    /// epochs per stage.
    pub fn full() -> Self {
        Self {
            lr_initial: 0.01,
            lr_final: 0.001,
            clip: 1e-3,
            momentum: 0.0,
            stages: vec![
                StageConfig {
                    kind: StageKind::Base,
                    epochs: 50,
                },
                StageConfig {
                    kind: StageKind::Recursive,
                    epochs: 50,
                },
                StageConfig {
                    kind: StageKind::Identity,
                    epochs: 50,
                },
            ],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_final > 0.0 && self.lr_initial >= self.lr_final && self.lr_initial.is_finite())
        {
            return Err(invalid!(
                "learning rates must satisfy lr_initial >= lr_final > 0"
            ));
        }
        if !(self.clip > 0.0) {
            return Err(invalid!("clip range must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.refresh_epochs == 0 || self.inference_stride == 0 {
            return Err(invalid!(
                "batch size, refresh interval and inference stride must be positive"
            ));
        }
        if self.stages.is_empty() {
            return Err(invalid!("no training stages"));
        }
        if !(self.divergence_loss > 0.0) {
            return Err(invalid!("divergence threshold must be positive"));
        }
        Ok(())
    }
}

/// Low-dose and routine-dose coefficients of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPair {
    pub low: SubbandStack,
    pub routine: SubbandStack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSource {
    Base,
    /// Generated from the network at the given refresh.
    Recursive(usize),
    Identity,
}

/// One training image: network input and target residual.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: SubbandStack,
    pub target: SubbandStack,
    pub source: SampleSource,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SourceCounts {
    pub base: u64,
    pub recursive: u64,
    pub identity: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub stage: usize,
    pub loss: f64,
    pub lr: f64,
    /// Largest magnitude of any coordinate of the applied update.
    pub max_update: f64,
}

/// Optimizer position, enough to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub velocity: Vec<f64>,
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    pairs: &'a [CoefficientPair],
    permutation: Option<Vec<usize>>,
    steps_per_epoch: u64,
    total_steps: u64,
    state: TrainState,
    pool: Vec<TrainingSample>,
    pool_key: Option<(usize, u64)>,
    recursive_generations: usize,
    counts: SourceCounts,
}

impl<'a> Trainer<'a> {
    /// `permutation` is the band order after a flip; required when flips are
    /// enabled.
    pub fn new(
        net: &Network,
        pairs: &'a [CoefficientPair],
        cfg: TrainConfig,
        permutation: Option<Vec<usize>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if pairs.is_empty() {
            return Err(invalid!("no training pairs"));
        }
        let bands = net.arch().in_bands;
        for (i, p) in pairs.iter().enumerate() {
            if p.low.band_count() != bands
                || p.routine.band_count() != bands
                || p.low.dims() != p.routine.dims()
            {
                return Err(invalid!(
                    "pair {i} does not match the network's {bands} bands"
                ));
            }
        }
        if cfg.flips {
            match &permutation {
                Some(p) if p.len() == bands && p.iter().all(|&k| k < bands) => {}
                _ => {
                    return Err(invalid!(
                        "flip augmentation needs a band permutation of length {bands}"
                    ))
                }
            }
        }
        let steps_per_epoch = pairs.len().div_ceil(cfg.batch_size) as u64;
        let total_steps = cfg.stages.iter().map(|s| s.epochs as u64).sum::<u64>() * steps_per_epoch;
        let velocity = vec![0.0; net.params().len()];
        Ok(Self {
            cfg,
            pairs,
            permutation,
            steps_per_epoch,
            total_steps,
            state: TrainState { step: 0, velocity },
            pool: Vec::new(),
            pool_key: None,
            recursive_generations: 0,
            counts: SourceCounts::default(),
        })
    }

    /// Continues from a saved optimizer position.
    pub fn resume(&mut self, state: TrainState) -> Result<()> {
        if state.velocity.len() != self.state.velocity.len() {
            return Err(invalid!("optimizer state does not match the network"));
        }
        self.state = state;
        self.pool_key = None;
        Ok(())
    }

    /// Rounds the optimizer velocity to single precision, the precision a
    /// checkpoint stores.
    pub fn quantize_state(&mut self) {
        for v in &mut self.state.velocity {
            *v = *v as f32 as f64;
        }
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    pub fn is_finished(&self) -> bool {
        self.state.step >= self.total_steps
    }

    pub fn consumed(&self) -> SourceCounts {
        self.counts
    }

    pub fn recursive_generations(&self) -> usize {
        self.recursive_generations
    }

    pub fn pool(&self) -> &[TrainingSample] {
        &self.pool
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let span = self.total_steps.saturating_sub(1).max(1) as f64;
        let t = (step as f64 / span).min(1.0);
        self.cfg.lr_initial * libm::pow(self.cfg.lr_final / self.cfg.lr_initial, t)
    }

    /// Stage index and epoch within that stage for a step.
    pub fn stage_at(&self, step: u64) -> (usize, u64) {
        let epoch = step / self.steps_per_epoch;
        let mut start = 0u64;
        for (i, s) in self.cfg.stages.iter().enumerate() {
            let end = start + s.epochs as u64;
            if epoch < end {
                return (i, epoch - start);
            }
            start = end;
        }
        let last = self.cfg.stages.len() - 1;
        (last, epoch - (start - self.cfg.stages[last].epochs as u64))
    }

    fn refresh_pool(&mut self, net: &Network, stage: usize, epoch_in_stage: u64) -> Result<()> {
        let kind = self.cfg.stages[stage].kind;
        let refresh = if kind == StageKind::Recursive {
            epoch_in_stage / self.cfg.refresh_epochs as u64
        } else {
            0
        };
        if self.pool_key == Some((stage, refresh)) {
            return Ok(());
        }
        let reached = &self.cfg.stages[..=stage];
        if self.pool_key.is_none() || self.pool_key.map(|k| k.0) != Some(stage) {
            // Rebuild the static part of the pool for this stage.
            self.pool
                .retain(|s| matches!(s.source, SampleSource::Recursive(_)));
            if reached.iter().any(|s| s.kind == StageKind::Base) {
                for p in self.pairs {
                    self.pool.push(TrainingSample {
                        input: p.low.clone(),
                        target: p.low.sub(&p.routine)?,
                        source: SampleSource::Base,
                    });
                }
            }
            if reached.iter().any(|s| s.kind == StageKind::Identity) {
                for p in self.pairs {
                    let (h, w) = p.routine.dims();
                    self.pool.push(TrainingSample {
                        input: p.routine.clone(),
                        target: SubbandStack::zeros(p.routine.band_count(), h, w),
                        source: SampleSource::Identity,
                    });
                }
            }
        }
        if kind == StageKind::Recursive {
            let generation = self.recursive_generations;
            for p in self.pairs {
                let q = infer::denoise_stack(net, &p.low, self.cfg.inference_stride)?;
                let target = q.sub(&p.routine)?;
                self.pool.push(TrainingSample {
                    input: q,
                    target,
                    source: SampleSource::Recursive(generation),
                });
            }
            self.recursive_generations += 1;
        }
        self.pool_key = Some((stage, refresh));
        Ok(())
    }

    fn draw_batch(
        &mut self,
        rng: &mut rng::SeededRng,
        patch: (usize, usize),
        bands: usize,
    ) -> (Tensor, Tensor) {
        let (ph, pw) = patch;
        let plane = ph * pw;
        let n = self.cfg.batch_size;
        let mut x = Tensor::zeros(n, bands, ph, pw);
        let mut t = Tensor::zeros(n, bands, ph, pw);
        for b in 0..n {
            let idx = rng.random_range(0..self.pool.len());
            let sample = &self.pool[idx];
            let (h, w) = sample.input.dims();
            let r0 = rng.random_range(0..h);
            let c0 = rng.random_range(0..w);
            let (flip_h, flip_v) = if self.cfg.flips {
                (rng.random_bool(0.5), rng.random_bool(0.5))
            } else {
                (false, false)
            };
            let flips = flip_h as usize + flip_v as usize;
            for band in 0..bands {
                // Each mirror maps direction θ to π − θ; two mirrors cancel.
                let src_band = match (&self.permutation, flips % 2) {
                    (Some(p), 1) => p[band],
                    _ => band,
                };
                let (si, st) = (sample.input.band(src_band), sample.target.band(src_band));
                let off = (b * bands + band) * plane;
                for y in 0..ph {
                    let yy = if flip_v { ph - 1 - y } else { y };
                    let r = (r0 + yy) % h;
                    for xcol in 0..pw {
                        let xx = if flip_h { pw - 1 - xcol } else { xcol };
                        let c = (c0 + xx) % w;
                        x.data[off + y * pw + xcol] = si.get(r, c);
                        t.data[off + y * pw + xcol] = st.get(r, c);
                    }
                }
            }
            match sample.source {
                SampleSource::Base => self.counts.base += 1,
                SampleSource::Recursive(_) => self.counts.recursive += 1,
                SampleSource::Identity => self.counts.identity += 1,
            }
        }
        (x, t)
    }

    /// One SGD step. Returns `None` once every configured epoch has run.
    pub fn step(&mut self, net: &mut Network) -> Result<Option<StepRecord>> {
        if self.is_finished() {
            return Ok(None);
        }
        let step = self.state.step;
        let (stage, epoch_in_stage) = self.stage_at(step);
        self.refresh_pool(net, stage, epoch_in_stage)?;
        let mut rng = rng::seeded(rng::derive_seed(self.cfg.seed, step));
        let arch = net.arch().clone();
        let (x, t) = self.draw_batch(&mut rng, arch.patch, arch.in_bands);
        let (loss, grad) = match net.loss_and_grad(&x, &t) {
            Ok(v) => v,
            Err(Error::NumericFailure(msg)) => {
                return Err(Error::Diverged(format!(
                    "step {step} (stage {stage}): {msg}"
                )));
            }
            Err(e) => return Err(e),
        };
        if !(loss <= self.cfg.divergence_loss) {
            return Err(Error::Diverged(format!(
                "loss {loss:e} at step {step} (stage {stage}) exceeds {:e}",
                self.cfg.divergence_loss
            )));
        }
        let lr = self.lr_at(step);
        let (clip, momentum) = (self.cfg.clip, self.cfg.momentum);
        let mut max_update: f64 = 0.0;
        for ((p, v), g) in net
            .params_mut()
            .iter_mut()
            .zip(self.state.velocity.iter_mut())
            .zip(&grad)
        {
            *v = momentum * *v + g.clamp(-clip, clip);
            let delta = lr * *v;
            *p -= delta;
            max_update = max_update.max(libm::fabs(delta));
        }
        self.state.step += 1;
        Ok(Some(StepRecord {
            step,
            stage,
            loss,
            lr,
            max_update,
        }))
    }

    /// Runs up to `max_steps` more steps (or to the end).
    pub fn run(&mut self, net: &mut Network, max_steps: u64) -> Result<Vec<StepRecord>> {
        let mut out = Vec::new();
        for _ in 0..max_steps {
            match self.step(net)? {
                Some(r) => out.push(r),
                None => break,
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub consumed: SourceCounts,
    pub recursive_generations: usize,
    pub final_state: TrainState,
}

/// Runs every configured stage from the start.
pub fn train(
    net: &mut Network,
    pairs: &[CoefficientPair],
    cfg: &TrainConfig,
    permutation: Option<Vec<usize>>,
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(net, pairs, cfg.clone(), permutation)?;
    let steps = trainer.run(net, u64::MAX)?;
    Ok(TrainReport {
        steps,
        consumed: trainer.consumed(),
        recursive_generations: trainer.recursive_generations(),
        final_state: trainer.state().clone(),
    })
}
