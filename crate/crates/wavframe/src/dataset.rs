//! Dataset directory: `manifest.toml` plus three tensor files per sample
//! (phantom, low-dose and routine-dose reconstructions).

use std::path::Path;

use serde::{Deserialize, Serialize};
use wavframe_core::ct_sim::{self, CtSample, DatasetConfig};

use crate::error::{Error, Result};
use crate::format::TensorFile;
use crate::fsutil::{self, StagedDir};

pub const MANIFEST: &str = "manifest.toml";
pub const DATASET_FORMAT: &str = "wavframe-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub index: usize,
    pub seed: u64,
    pub fraction: f64,
    pub photon_starved: bool,
    pub phantom: String,
    pub low_dose: String,
    pub routine_dose: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub config: DatasetConfig,
    pub samples: Vec<SampleEntry>,
}

fn file_names(index: usize, fraction: f64) -> (String, String, String) {
    let tag = format!("{:03}", (fraction * 1000.0).round() as u32);
    (
        format!("phantom_{index:04}.wft"),
        format!("low_{index:04}_d{tag}.wft"),
        format!("routine_{index:04}.wft"),
    )
}

/// Simulates the dataset and writes it to `dir`, replacing any previous
/// contents only once every file is in place.
pub fn write_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let samples = ct_sim::make_dataset(cfg)?;
    let staged = StagedDir::new(dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let (phantom, low, routine) = file_names(s.index, s.fraction);
        // Phantom and routine dose are shared across fractions.
        if !staged.join(&phantom).exists() {
            TensorFile::from_image(&s.phantom).write(&staged.join(&phantom))?;
            TensorFile::from_image(&s.routine_dose).write(&staged.join(&routine))?;
        }
        TensorFile::from_image(&s.low_dose).write(&staged.join(&low))?;
        entries.push(SampleEntry {
            index: s.index,
            seed: s.seed,
            fraction: s.fraction,
            photon_starved: s.photon_starved,
            phantom,
            low_dose: low,
            routine_dose: routine,
        });
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        config: cfg.clone(),
        samples: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fsutil::write_atomic(&staged.join(MANIFEST), text.as_bytes())?;
    staged.commit()?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let manifest: DatasetManifest = toml::from_str(&fsutil::read_string(&path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.format != DATASET_FORMAT || manifest.version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "{} is {} version {}, expected {DATASET_FORMAT} version {DATASET_VERSION}",
            path.display(),
            manifest.format,
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Loads every sample, optionally only those at one dose fraction.
pub fn read_dataset(dir: &Path, fraction: Option<f64>) -> Result<(DatasetManifest, Vec<CtSample>)> {
    let manifest = read_manifest(dir)?;
    let mut samples = Vec::new();
    for e in &manifest.samples {
        if fraction.is_some_and(|f| (f - e.fraction).abs() > 1e-12) {
            continue;
        }
        let load = |name: &str| TensorFile::read(&dir.join(name))?.to_image();
        samples.push(CtSample {
            index: e.index,
            seed: e.seed,
            fraction: e.fraction,
            phantom: load(&e.phantom)?,
            low_dose: load(&e.low_dose)?,
            routine_dose: load(&e.routine_dose)?,
            photon_starved: e.photon_starved,
        });
    }
    if samples.is_empty() {
        return Err(Error::Format(format!(
            "{} has no samples at the requested dose",
            dir.display()
        )));
    }
    Ok((manifest, samples))
}
