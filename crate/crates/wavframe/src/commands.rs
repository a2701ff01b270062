//! The six subcommands as library functions. Every command writes into a
//! staging directory and renames it onto `out` only after success.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wavframe_core::classical::{self, UndecimatedHaar};
use wavframe_core::directional::{DirectionalTransform, TransformPlan, IDENTITY_TOLERANCE};
use wavframe_core::framelets::{self, FrameOperator, PoolingPair};
use wavframe_core::hankel::{self, FilterBank};
use wavframe_core::km::{self, KmConfig, Reference};
use wavframe_core::linalg::{self, Matrix};
use wavframe_core::metrics::{self, MetricReport};
use wavframe_core::rng;
use wavframe_core::wavresnet::{
    self, ArchConfig, CoefficientPair, GradCheckConfig, Network, NetworkDenoiser, SourceCounts,
    Tensor, Trainer,
};
use wavframe_core::Image;

use crate::checkpoint::Checkpoint;
use crate::config::{DenoiseMode, RunConfig};
use crate::dataset::{self, DatasetManifest};
use crate::error::{Error, Result};
use crate::format::{self, TensorFile};
use crate::fsutil::{self, StagedDir};

pub const CHECKPOINT_FILE: &str = "checkpoint.wfc";
pub const LOSS_FILE: &str = "loss.tsv";
pub const TRAIN_MANIFEST: &str = "train.toml";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_TOML: &str = "report.toml";

fn write_text(path: &Path, text: &str) -> Result<()> {
    fsutil::write_atomic(path, text.as_bytes())
}

fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Format(e.to_string()))
}

fn build_plan(
    transform: &wavframe_core::directional::TransformConfig,
    h: usize,
    w: usize,
) -> Result<(DirectionalTransform, TransformPlan)> {
    let t = DirectionalTransform::build(transform.clone())?;
    let plan = t.plan(h, w)?;
    Ok((t, plan))
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    dataset::write_dataset(&cfg.dataset, out)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub resume: Option<PathBuf>,
    /// Stop once the optimizer reaches this step.
    pub max_steps: Option<u64>,
    /// Also write `checkpoint-<step>.wfc` every this many steps.
    pub checkpoint_every: Option<u64>,
    /// Print progress to stderr every this many steps.
    pub progress_every: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumedSamples {
    pub base: u64,
    pub recursive: u64,
    pub identity: u64,
}

impl From<SourceCounts> for ConsumedSamples {
    fn from(c: SourceCounts) -> Self {
        Self {
            base: c.base,
            recursive: c.recursive,
            identity: c.identity,
        }
    }
}

/// Audit record written next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainManifest {
    pub start_step: u64,
    pub final_step: u64,
    pub total_steps: u64,
    pub pairs: usize,
    pub recursive_generations: usize,
    pub consumed: ConsumedSamples,
    pub final_loss: Option<f64>,
    pub config: RunConfig,
}

pub fn train(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    opts: &TrainOptions,
) -> Result<TrainManifest> {
    cfg.validate()?;
    let (_, samples) = dataset::read_dataset(data, None)?;
    let (h, w) = samples[0].low_dose.dims();
    let (mut net, transform_cfg, state) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let state = ck.state.ok_or_else(|| {
                Error::Format(format!("{} holds no optimizer state", path.display()))
            })?;
            (ck.net, ck.transform, Some(state))
        }
        None => (
            Network::init(cfg.arch.clone(), cfg.init_seed())?,
            cfg.transform.clone(),
            None,
        ),
    };
    let (transform, plan) = build_plan(&transform_cfg, h, w)?;
    let pairs = samples
        .iter()
        .map(|s| {
            Ok(CoefficientPair {
                low: plan.forward(&s.low_dose)?,
                routine: plan.forward(&s.routine_dose)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut trainer = Trainer::new(
        &net,
        &pairs,
        cfg.train.clone(),
        Some(transform.flip_permutation()),
    )?;
    let start_step = match state {
        Some(s) => {
            let step = s.step;
            trainer.resume(s)?;
            step
        }
        None => 0,
    };
    let limit = opts
        .max_steps
        .unwrap_or(u64::MAX)
        .min(trainer.total_steps());
    let staged = StagedDir::new(out)?;
    let mut loss = String::from("step\tstage\tloss\tlr\tmax_update\n");
    let mut final_loss = None;
    let snapshot = |net: &mut Network, trainer: &mut Trainer, path: &Path| -> Result<()> {
        net.quantize_f32();
        trainer.quantize_state();
        Checkpoint {
            net: net.clone(),
            transform: transform_cfg.clone(),
            state: Some(trainer.state().clone()),
        }
        .save(path)
    };
    while trainer.state().step < limit {
        let Some(rec) = trainer.step(&mut net)? else {
            break;
        };
        let _ = writeln!(
            loss,
            "{}\t{}\t{:e}\t{:e}\t{:e}",
            rec.step, rec.stage, rec.loss, rec.lr, rec.max_update
        );
        final_loss = Some(rec.loss);
        let done = rec.step + 1;
        if opts.progress_every.is_some_and(|k| k > 0 && done % k == 0) {
            eprintln!(
                "step {done}/{} stage {} loss {:.4e}",
                trainer.total_steps(),
                rec.stage,
                rec.loss
            );
        }
        if opts
            .checkpoint_every
            .is_some_and(|k| k > 0 && done % k == 0)
            && done < limit
        {
            snapshot(
                &mut net,
                &mut trainer,
                &staged.join(&format!("checkpoint-{done:06}.wfc")),
            )?;
        }
    }
    snapshot(&mut net, &mut trainer, &staged.join(CHECKPOINT_FILE))?;
    write_text(&staged.join(LOSS_FILE), &loss)?;
    let manifest = TrainManifest {
        start_step,
        final_step: trainer.state().step,
        total_steps: trainer.total_steps(),
        pairs: pairs.len(),
        recursive_generations: trainer.recursive_generations(),
        consumed: trainer.consumed().into(),
        final_loss,
        config: cfg.clone(),
    };
    write_text(&staged.join(TRAIN_MANIFEST), &to_toml(&manifest)?)?;
    staged.commit()?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseRow {
    pub name: String,
    pub input: Option<MetricReport>,
    pub feed_forward: Option<MetricReport>,
    pub km: Option<MetricReport>,
    pub km_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseReport {
    pub peak: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub km: KmConfig,
    pub rows: Vec<DenoiseRow>,
}

struct Job {
    name: String,
    input: Image,
    reference: Option<Image>,
}

fn load_jobs(cfg: &RunConfig, input: &Path, reference: Option<&Path>) -> Result<Vec<Job>> {
    if input.is_dir() {
        let (_, samples) = dataset::read_dataset(input, cfg.denoise.fraction)?;
        Ok(samples
            .into_iter()
            .map(|s| Job {
                name: format!(
                    "s{:04}_d{:03}",
                    s.index,
                    (s.fraction * 1000.0).round() as u32
                ),
                input: s.low_dose,
                reference: Some(s.routine_dose),
            })
            .collect())
    } else {
        let img = TensorFile::read(input)?.to_image()?;
        let reference = reference
            .map(|p| TensorFile::read(p)?.to_image())
            .transpose()?;
        let name = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        Ok(vec![Job {
            name,
            input: img,
            reference,
        }])
    }
}

fn metric(cfg: &RunConfig, est: &Image, reference: Option<&Image>) -> Result<Option<MetricReport>> {
    let Some(r) = reference else { return Ok(None) };
    let peak = cfg.peak();
    let ssim = metrics::ssim(est, r, &cfg.metrics.ssim(peak))?;
    Ok(Some(MetricReport {
        rmse: metrics::rmse(est, r)?,
        psnr: metrics::psnr(est, r, peak)?,
        ssim,
        peak,
    }))
}

fn save_image(dir: &StagedDir, name: &str, img: &Image, peak: f64) -> Result<()> {
    TensorFile::from_image(img).write(&dir.join(&format!("{name}.wft")))?;
    format::write_pgm(&dir.join(&format!("{name}.pgm")), img, 0.0, peak)
}

fn fmt_metric(m: &Option<MetricReport>) -> String {
    match m {
        Some(m) => format!("{:>9.3} {:>7.4} {:>9.3e}", m.psnr, m.ssim, m.rmse),
        None => format!("{:>9} {:>7} {:>9}", "-", "-", "-"),
    }
}

pub fn denoise(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    reference: Option<&Path>,
    out: &Path,
) -> Result<DenoiseReport> {
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint)?;
    let jobs = load_jobs(cfg, input, reference)?;
    let staged = StagedDir::new(out)?;
    let peak = cfg.peak();
    let mut rows = Vec::with_capacity(jobs.len());
    let mut plan_cache: Option<((usize, usize), TransformPlan)> = None;
    for job in &jobs {
        let dims = job.input.dims();
        if plan_cache.as_ref().map(|(d, _)| *d) != Some(dims) {
            plan_cache = Some((dims, build_plan(&ck.transform, dims.0, dims.1)?.1));
        }
        let plan = &plan_cache.as_ref().expect("plan").1;
        let q = NetworkDenoiser {
            net: &ck.net,
            plan,
            stride: cfg.denoise.stride,
        };
        let mut row = DenoiseRow {
            name: job.name.clone(),
            input: metric(cfg, &job.input, job.reference.as_ref())?,
            feed_forward: None,
            km: None,
            km_iterations: None,
        };
        if matches!(
            cfg.denoise.mode,
            DenoiseMode::FeedForward | DenoiseMode::Both
        ) {
            let y = km::Denoiser::denoise(&q, &job.input)?;
            row.feed_forward = metric(cfg, &y, job.reference.as_ref())?;
            save_image(&staged, &format!("{}_ff", job.name), &y, peak)?;
        }
        if matches!(cfg.denoise.mode, DenoiseMode::Km | DenoiseMode::Both) {
            let r = job
                .reference
                .as_ref()
                .map(|image| Reference { image, peak });
            let outcome = km::km_denoise(&job.input, &q, &cfg.km, r)?;
            row.km = metric(cfg, &outcome.estimate, job.reference.as_ref())?;
            row.km_iterations = Some(outcome.trace.len());
            save_image(
                &staged,
                &format!("{}_km", job.name),
                &outcome.estimate,
                peak,
            )?;
            write_text(
                &staged.join(&format!("{}_trace.tsv", job.name)),
                &outcome.trace.to_table(),
            )?;
        }
        rows.push(row);
    }
    let m = &cfg.metrics;
    let report = DenoiseReport {
        peak,
        ssim_window: m.ssim_window,
        ssim_sigma: m.ssim_sigma,
        ssim_k1: m.ssim_k1,
        ssim_k2: m.ssim_k2,
        km: cfg.km.clone(),
        rows,
    };
    let mut text = format!(
        "# peak {peak}, SSIM window {} sigma {} k1 {} k2 {}\n{:<16} {:>9} {:>7} {:>9}   {:>9} {:>7} {:>9}   {:>9} {:>7} {:>9}\n",
        m.ssim_window, m.ssim_sigma, m.ssim_k1, m.ssim_k2, "image", "in_psnr", "in_ssim", "in_rmse", "ff_psnr", "ff_ssim", "ff_rmse", "km_psnr",
        "km_ssim", "km_rmse"
    );
    for r in &report.rows {
        let _ = writeln!(
            text,
            "{:<16} {}   {}   {}",
            r.name,
            fmt_metric(&r.input),
            fmt_metric(&r.feed_forward),
            fmt_metric(&r.km)
        );
    }
    write_text(&staged.join(REPORT_TEXT), &text)?;
    write_text(&staged.join(REPORT_TOML), &to_toml(&report)?)?;
    staged.commit()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSpectra {
    pub name: String,
    /// One normalized descending spectrum per module, first module first.
    pub modules: Vec<Vec<f64>>,
}

impl ProbeSpectra {
    pub fn tail_masses(&self) -> Vec<f64> {
        self.modules
            .iter()
            .map(|s| wavresnet::tail_mass(s))
            .collect()
    }
}

pub fn spectrum(
    cfg: &RunConfig,
    checkpoint: &Path,
    probe: &Path,
    out: &Path,
) -> Result<Vec<ProbeSpectra>> {
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint)?;
    let probes: Vec<(String, Image)> = if probe.is_dir() {
        let (_, samples) = dataset::read_dataset(probe, cfg.denoise.fraction)?;
        samples
            .into_iter()
            .take(cfg.spectrum.probes)
            .map(|s| {
                (
                    format!(
                        "s{:04}_d{:03}",
                        s.index,
                        (s.fraction * 1000.0).round() as u32
                    ),
                    s.low_dose,
                )
            })
            .collect()
    } else {
        let name = probe
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "probe".into());
        vec![(name, TensorFile::read(probe)?.to_image()?)]
    };
    let staged = StagedDir::new(out)?;
    let mut result = Vec::with_capacity(probes.len());
    let mut table = String::from("probe\tmodule\tindex\tsigma\n");
    let mut tails = String::from("probe\tmodule\ttail_mass\n");
    for (name, img) in probes {
        let (h, w) = img.dims();
        let (_, plan) = build_plan(&ck.transform, h, w)?;
        let modules =
            wavresnet::module_spectra(&ck.net, &plan.forward(&img)?, cfg.spectrum.window)?;
        let spectra = ProbeSpectra { name, modules };
        for (m, s) in spectra.modules.iter().enumerate() {
            for (i, v) in s.iter().enumerate() {
                let _ = writeln!(table, "{}\t{m}\t{i}\t{v:e}", spectra.name);
            }
            let _ = writeln!(
                tails,
                "{}\t{m}\t{:.6}",
                spectra.name,
                wavresnet::tail_mass(s)
            );
        }
        result.push(spectra);
    }
    write_text(&staged.join("spectrum.tsv"), &table)?;
    write_text(&staged.join("tail_mass.tsv"), &tails)?;
    staged.commit()?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Scale the dual filter of this band by this factor before checking.
    pub corrupt_dual: Option<(usize, f64)>,
}

fn check(name: &str, residual: f64, tolerance: f64) -> Check {
    Check {
        name: name.into(),
        passed: residual <= tolerance,
        residual,
        tolerance,
    }
}

/// Hankel/convolution, frame-bound, perfect-reconstruction, resolution of
/// identity and gradient checks.
pub fn verify(cfg: &RunConfig, opts: &VerifyOptions) -> Result<Vec<Check>> {
    cfg.validate()?;
    let mut r = rng::seeded(cfg.seed);
    let mut checks = Vec::new();

    // Hankel product against circular convolution.
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let f = rng::gaussian_vec(&mut r, 32, 1.0);
        let psi = rng::gaussian_vec(&mut r, 5, 1.0);
        let via_hankel = hankel::build_hankel(&f, 5)?.matrix().mul_vec(&psi)?;
        let direct = hankel::siso_conv(&f, &psi)?;
        worst = worst
            .max(linalg::max_abs_diff(&via_hankel, &direct) / linalg::norm(&direct).max(1e-300));
    }
    checks.push(check("hankel_convolution", worst, 1e-12));

    // Framelet pair with canonical duals.
    let (n, d, q) = (24, 4, 6);
    let phi = Matrix::from_vec(n, n, rng::gaussian_vec(&mut r, n * n, 1.0))?;
    let psi = Matrix::from_vec(d, q, rng::gaussian_vec(&mut r, d * q, 1.0))?;
    let op = FrameOperator::with_canonical_dual(
        PoolingPair::with_canonical_dual(phi)?,
        FilterBank::new(d, 1, q, psi)?,
    )?;
    let pr = framelets::verify_pr(&op, 1e-10)?;
    checks.push(check(
        "framelet_perfect_reconstruction",
        pr.max_residual,
        1e-10,
    ));
    let bounds = framelets::estimate_frame_bounds(&op, 32, Default::default())?;
    checks.push(Check {
        name: "framelet_lower_bound_positive".into(),
        passed: bounds.is_frame,
        residual: bounds.lower,
        tolerance: 0.0,
    });

    let haar = UndecimatedHaar::new(64, 3)?;
    let tight = framelets::verify_tight(&haar, classical::TIGHTNESS_TOLERANCE)?;
    checks.push(check(
        "haar_tightness",
        tight.max_residual,
        classical::TIGHTNESS_TOLERANCE,
    ));

    // Directional transform.
    let mut transform = DirectionalTransform::build(cfg.transform.clone())?;
    if let Some((band, factor)) = opts.corrupt_dual {
        if band >= transform.band_count() {
            return Err(Error::Config(format!("band {band} does not exist")));
        }
        transform = transform.with_corrupted_dual(band, factor);
    }
    let size = cfg.dataset.size;
    let residual = transform.identity_residual(size, size, 4, rng::derive_seed(cfg.seed, 1))?;
    checks.push(check("directional_identity", residual, IDENTITY_TOLERANCE));

    // Gradients of a small network.
    let arch = ArchConfig {
        in_bands: 2,
        channels: 4,
        module_count: 2,
        convs_per_module: 2,
        kernel: 3,
        patch: (6, 6),
        input_scale: 1.0,
    };
    let mut worst: f64 = 0.0;
    for k in 0..3u64 {
        let seed = rng::derive_seed(cfg.seed, 10 + k);
        let net = Network::init(arch.clone(), seed)?;
        let mut rr = rng::seeded(seed);
        let x = Tensor::from_vec(2, 2, 6, 6, rng::gaussian_vec(&mut rr, 144, 1.0))?;
        let t = Tensor::from_vec(2, 2, 6, 6, rng::gaussian_vec(&mut rr, 144, 0.1))?;
        let rep = wavresnet::gradient_check(
            &net,
            &x,
            &t,
            &GradCheckConfig {
                seed,
                ..Default::default()
            },
        )?;
        worst = worst.max(rep.max_rel_error);
    }
    checks.push(check("gradient_finite_difference", worst, 1e-3));
    Ok(checks)
}

pub fn format_checks(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        let _ = writeln!(
            s,
            "{} {:<34} residual {:.3e} (tolerance {:.1e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.residual,
            c.tolerance
        );
    }
    s
}

pub fn metrics_cmd(
    cfg: &RunConfig,
    estimate: &Path,
    reference: &Path,
    out: Option<&Path>,
) -> Result<MetricReport> {
    cfg.validate()?;
    let est = TensorFile::read(estimate)?.to_image()?;
    let r = TensorFile::read(reference)?.to_image()?;
    let report = metric(cfg, &est, Some(&r))?.expect("reference given");
    if let Some(out) = out {
        let staged = StagedDir::new(out)?;
        let m = &cfg.metrics;
        let text = format!(
            "# peak {}, SSIM window {} sigma {} k1 {} k2 {}\nrmse\t{:e}\npsnr\t{:.4}\nssim\t{:.6}\n",
            report.peak, m.ssim_window, m.ssim_sigma, m.ssim_k1, m.ssim_k2, report.rmse, report.psnr, report.ssim
        );
        write_text(&staged.join(REPORT_TEXT), &text)?;
        write_text(&staged.join(REPORT_TOML), &to_toml(&report)?)?;
        staged.commit()?;
    }
    Ok(report)
}
