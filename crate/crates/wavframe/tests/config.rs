use wavframe::config::{DenoiseMode, RunConfig};

#[test]
fn toml_round_trip_preserves_every_field() {
    let mut cfg = RunConfig::default();
    cfg.denoise.mode = DenoiseMode::Km;
    cfg.metrics.peak = Some(1.5);
    cfg.km.mu = 0.25;
    let back = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn omitted_keys_take_defaults() {
    let cfg = RunConfig::parse("[km]\nmax_iters = 7\n").unwrap();
    assert_eq!(cfg.km.max_iters, 7);
    assert_eq!(cfg.dataset, RunConfig::default().dataset);
    assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(RunConfig::parse("learning_rate = 0.1\n").is_err());
    assert!(RunConfig::parse("[train]\nepochs = 3\n").is_err());
}

#[test]
fn root_seed_reaches_dataset_and_training() {
    let cfg = RunConfig::parse("seed = 9\n").unwrap().resolved(None);
    assert_eq!((cfg.dataset.seed, cfg.train.seed), (9, 9));
    let cfg = cfg.resolved(Some(4));
    assert_eq!((cfg.seed, cfg.dataset.seed, cfg.train.seed), (4, 4, 4));
    assert_ne!(
        cfg.init_seed(),
        RunConfig::default().resolved(Some(5)).init_seed()
    );
}

#[test]
fn inconsistent_sections_fail_validation() {
    let mut cfg = RunConfig::default();
    assert!(cfg.validate().is_ok());
    cfg.arch.in_bands = 7;
    assert!(cfg.validate().is_err());

    let mut cfg = RunConfig::default();
    cfg.denoise.stride = 0;
    assert!(cfg.validate().is_err());
}

#[test]
fn relaxation_forms_parse() {
    use wavframe_core::km::Relaxation;
    let cfg = RunConfig::parse("[km]\nrelaxation = { constant = 0.3 }\n").unwrap();
    assert_eq!(cfg.km.relaxation, Relaxation::Constant(0.3));
    let cfg = RunConfig::parse("[km]\nrelaxation = \"unrelaxed\"\n").unwrap();
    assert_eq!(cfg.km.relaxation, Relaxation::Unrelaxed);
    let cfg = RunConfig::parse("[km]\nrelaxation = { schedule = [0.9, 0.5] }\n").unwrap();
    assert_eq!(cfg.km.relaxation, Relaxation::Schedule(vec![0.9, 0.5]));
}
