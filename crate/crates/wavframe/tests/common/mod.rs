#![allow(dead_code)]

use wavframe::config::RunConfig;
use wavframe_core::wavresnet::{ArchConfig, StageConfig, StageKind};

/// A configuration that simulates two 64×64 phantoms and trains a very
/// small network in a few seconds.
pub fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset.count = 2;
    cfg.dataset.angles = 60;
    cfg.dataset.dose_fractions = vec![0.25];
    cfg.arch = ArchConfig {
        in_bands: 15,
        channels: 4,
        module_count: 1,
        convs_per_module: 1,
        kernel: 3,
        patch: (16, 16),
        input_scale: 20.0,
    };
    cfg.train.batch_size = 2;
    cfg.train.refresh_epochs = 1;
    cfg.train.inference_stride = 16;
    cfg.train.stages = stages(&[
        (StageKind::Base, 2),
        (StageKind::Recursive, 1),
        (StageKind::Identity, 1),
    ]);
    cfg.denoise.stride = 16;
    cfg.spectrum.probes = 2;
    cfg.resolved(Some(5))
}

pub fn stages(list: &[(StageKind, usize)]) -> Vec<StageConfig> {
    list.iter()
        .map(|&(kind, epochs)| StageConfig { kind, epochs })
        .collect()
}
