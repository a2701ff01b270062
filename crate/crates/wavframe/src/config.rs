//! Run configuration: one TOML file with a section per stage of the
//! pipeline. Missing keys take their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wavframe_core::ct_sim::DatasetConfig;
use wavframe_core::directional::TransformConfig;
use wavframe_core::km::KmConfig;
use wavframe_core::metrics::SsimConfig;
use wavframe_core::wavresnet::{ArchConfig, TrainConfig, DEFAULT_STRIDE};

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseMode {
    /// One pass of the network.
    FeedForward,
    /// The relaxed fixed-point iteration around the network.
    Km,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseSection {
    pub mode: DenoiseMode,
    /// Patch stride of whole-image inference.
    pub stride: usize,
    /// Dose fraction evaluated when the input is a dataset directory; every
    /// fraction when absent.
    pub fraction: Option<f64>,
}

impl Default for DenoiseSection {
    fn default() -> Self {
        Self {
            mode: DenoiseMode::Both,
            stride: DEFAULT_STRIDE,
            fraction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    /// Extended Hankel window (rows, cols).
    pub window: (usize, usize),
    /// Probe images taken from a dataset directory.
    pub probes: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            window: wavframe_core::wavresnet::SPECTRUM_WINDOW,
            probes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Intensity range for PSNR and SSIM; the dataset peak when absent.
    pub peak: Option<f64>,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let s = SsimConfig::with_range(1.0);
        Self {
            peak: None,
            ssim_window: s.window,
            ssim_sigma: s.sigma,
            ssim_k1: s.k1,
            ssim_k2: s.k2,
        }
    }
}

impl MetricsSection {
    pub fn ssim(&self, peak: f64) -> SsimConfig {
        SsimConfig {
            window: self.ssim_window,
            sigma: self.ssim_sigma,
            k1: self.ssim_k1,
            k2: self.ssim_k2,
            dynamic_range: peak,
        }
    }
}

/// Every command reads the same file and uses the sections it needs.
///
/// `seed` is the single root of all randomness: [`RunConfig::resolved`]
/// copies it into the dataset and training sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub transform: TransformConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub km: KmConfig,
    pub denoise: DenoiseSection,
    pub spectrum: SpectrumSection,
    pub metrics: MetricsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dataset = DatasetConfig::default();
        let mut cfg = Self {
            seed: dataset.seed,
            dataset,
            transform: TransformConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            km: KmConfig::default(),
            denoise: DenoiseSection::default(),
            spectrum: SpectrumSection::default(),
            metrics: MetricsSection::default(),
        };
        cfg.train.seed = cfg.seed;
        cfg
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fsutil::read_string(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies an optional seed override and propagates the root seed.
    pub fn resolved(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.dataset.seed = self.seed;
        self.train.seed = self.seed;
        self
    }

    /// Seed of the network initialization.
    pub fn init_seed(&self) -> u64 {
        wavframe_core::rng::derive_seed(self.seed, 0x1417)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.transform.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        self.km.validate()?;
        if self.arch.in_bands != self.transform.band_count() {
            return Err(Error::Config(format!(
                "arch.in_bands = {} but the transform has {} bands",
                self.arch.in_bands,
                self.transform.band_count()
            )));
        }
        if self.denoise.stride == 0 {
            return Err(Error::Config("denoise.stride must be positive".into()));
        }
        if self.spectrum.probes == 0 || self.spectrum.window.0 == 0 || self.spectrum.window.1 == 0 {
            return Err(Error::Config(
                "spectrum probes and window must be positive".into(),
            ));
        }
        if let Some(p) = self.metrics.peak {
            if !(p > 0.0) {
                return Err(Error::Config("metrics.peak must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn peak(&self) -> f64 {
        self.metrics.peak.unwrap_or(self.dataset.peak)
    }
}
