mod common;

use std::path::Path;
use std::process::Command;

use common::{small_config, stages};
use wavframe::checkpoint::Checkpoint;
use wavframe::commands::{self, TrainOptions, VerifyOptions, CHECKPOINT_FILE, LOSS_FILE};
use wavframe::config::{DenoiseMode, RunConfig};
use wavframe::dataset::{read_dataset, MANIFEST};
use wavframe::format::TensorFile;
use wavframe_core::wavresnet::StageKind;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wavframe"))
}

fn write_config(dir: &Path, cfg: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn empty_dataset_is_refused_without_writing_anything() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.dataset.count = 0;
    let out = tmp.path().join("data");
    assert!(commands::gen_data(&cfg, &out).is_err());
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn generated_data_is_deterministic_and_reloads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    commands::gen_data(&cfg, &a).unwrap();
    commands::gen_data(&cfg, &b).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 1 + 2 * 3);
    for name in &names {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name:?}"
        );
    }
    let (manifest, samples) = read_dataset(&a, None).unwrap();
    assert_eq!(manifest.config, cfg.dataset);
    assert_eq!(
        samples,
        wavframe_core::ct_sim::make_dataset(&cfg.dataset).unwrap()
    );
    assert!(a.join(MANIFEST).exists());
}

#[test]
fn training_runs_every_stage_and_writes_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let data = tmp.path().join("data");
    commands::gen_data(&cfg, &data).unwrap();
    let out = tmp.path().join("run");
    let m = commands::train(&cfg, &data, &out, &TrainOptions::default()).unwrap();
    assert_eq!((m.start_step, m.final_step, m.total_steps), (0, 4, 4));
    assert_eq!(
        m.consumed.base + m.consumed.recursive + m.consumed.identity,
        4 * 2
    );
    assert!(m.consumed.recursive > 0 || m.consumed.identity > 0);
    assert_eq!(m.recursive_generations, 1);
    assert!(m.final_loss.unwrap().is_finite());

    let ck = Checkpoint::load(&out.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.net.arch(), &cfg.arch);
    assert_eq!(ck.state.unwrap().step, 4);
    let loss = std::fs::read_to_string(out.join(LOSS_FILE)).unwrap();
    assert_eq!(loss.lines().count(), 1 + 4);
}

#[test]
fn resuming_from_a_checkpoint_matches_the_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.train.stages = stages(&[(StageKind::Base, 3)]);
    let data = tmp.path().join("data");
    commands::gen_data(&cfg, &data).unwrap();

    let straight = tmp.path().join("straight");
    let opts = TrainOptions {
        checkpoint_every: Some(2),
        ..Default::default()
    };
    commands::train(&cfg, &data, &straight, &opts).unwrap();

    let first = tmp.path().join("first");
    commands::train(
        &cfg,
        &data,
        &first,
        &TrainOptions {
            max_steps: Some(2),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(
        std::fs::read(first.join(CHECKPOINT_FILE)).unwrap(),
        std::fs::read(straight.join("checkpoint-000002.wfc")).unwrap()
    );
    let resumed = tmp.path().join("resumed");
    let opts = TrainOptions {
        resume: Some(first.join(CHECKPOINT_FILE)),
        ..Default::default()
    };
    let m = commands::train(&cfg, &data, &resumed, &opts).unwrap();
    assert_eq!((m.start_step, m.final_step), (2, 3));
    assert_eq!(
        std::fs::read(resumed.join(CHECKPOINT_FILE)).unwrap(),
        std::fs::read(straight.join(CHECKPOINT_FILE)).unwrap()
    );

    let tail = |dir: &Path| {
        std::fs::read_to_string(dir.join(LOSS_FILE))
            .unwrap()
            .lines()
            .skip(3)
            .map(String::from)
            .collect::<Vec<_>>()
    };
    assert_eq!(
        tail(&straight),
        std::fs::read_to_string(resumed.join(LOSS_FILE))
            .unwrap()
            .lines()
            .skip(1)
            .map(String::from)
            .collect::<Vec<_>>()
    );
}

#[test]
fn identity_network_in_km_mode_returns_the_input() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.denoise.mode = DenoiseMode::Both;
    let data = tmp.path().join("data");
    commands::gen_data(&cfg, &data).unwrap();
    let mut net = wavframe_core::wavresnet::Network::init(cfg.arch.clone(), 1).unwrap();
    net.zero_output_layer();
    let ck_path = tmp.path().join("identity.wfc");
    Checkpoint {
        net,
        transform: cfg.transform.clone(),
        state: None,
    }
    .save(&ck_path)
    .unwrap();

    let (_, samples) = read_dataset(&data, None).unwrap();
    let input = tmp.path().join("low.wft");
    TensorFile::from_image(&samples[0].low_dose)
        .write(&input)
        .unwrap();
    let out = tmp.path().join("den");
    let report = commands::denoise(&cfg, &ck_path, &input, None, &out).unwrap();
    assert_eq!(report.rows.len(), 1);
    for suffix in ["ff", "km"] {
        let got = TensorFile::read(&out.join(format!("low_{suffix}.wft")))
            .unwrap()
            .to_image()
            .unwrap();
        let worst = got
            .data()
            .iter()
            .zip(samples[0].low_dose.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "{suffix}: {worst}");
    }
}

#[test]
fn verify_passes_and_detects_a_corrupted_dual() {
    let cfg = RunConfig::default();
    let checks = commands::verify(&cfg, &VerifyOptions::default()).unwrap();
    assert!(
        checks.iter().all(|c| c.passed),
        "{}",
        commands::format_checks(&checks)
    );
    let bad = commands::verify(
        &cfg,
        &VerifyOptions {
            corrupt_dual: Some((3, 1.5)),
        },
    )
    .unwrap();
    let identity = bad
        .iter()
        .find(|c| c.name == "directional_identity")
        .unwrap();
    assert!(!identity.passed);
}

#[test]
fn binary_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), &small_config());
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let den = tmp.path().join("den");
    let spec = tmp.path().join("spec");
    let ck = run.join(CHECKPOINT_FILE);
    let steps: [&[&str]; 4] = [
        &["gen-data", "--out", data.to_str().unwrap()],
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
        ],
        &[
            "denoise",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--input",
            data.to_str().unwrap(),
            "--out",
            den.to_str().unwrap(),
        ],
        &[
            "spectrum",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--probe",
            data.to_str().unwrap(),
            "--out",
            spec.to_str().unwrap(),
        ],
    ];
    for args in steps {
        let out = bin()
            .arg("--config")
            .arg(&cfg_path)
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let report = std::fs::read_to_string(den.join(commands::REPORT_TEXT)).unwrap();
    assert_eq!(report.lines().count(), 2 + 2);
    assert!(spec.join("tail_mass.tsv").exists());

    let a = data.join("routine_0000.wft");
    let out = bin()
        .args([
            "metrics",
            "--estimate",
            a.to_str().unwrap(),
            "--reference",
            a.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ssim\t1.0"));
}

#[test]
fn binary_reports_failures_with_nonzero_status() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.wfc");
    let out = bin()
        .args([
            "denoise",
            "--checkpoint",
            missing.to_str().unwrap(),
            "--input",
            "x.wft",
            "--out",
        ])
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.wfc"));
    assert!(!tmp.path().join("out").exists());

    let out = bin()
        .args(["verify", "--corrupt-dual", "2", "1.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL directional_identity"));

    let bad_cfg = tmp.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[train]\nepochs = 3\n").unwrap();
    let out = bin()
        .arg("--config")
        .arg(&bad_cfg)
        .arg("verify")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
