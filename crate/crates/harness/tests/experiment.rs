use diffnea_core::policy::TrainConfig;
use diffnea_core::Execution;
use diffnea_harness::excitation::{ArmExcitationConfig, BallExcitationConfig};
use diffnea_harness::experiment::{run_experiment, ExperimentConfig, ExperimentReport, Method};
use diffnea_harness::identify::ArmIdentConfig;
use diffnea_harness::report::{read_document, write_json, Document};

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        lengths: vec![0.4],
        rl_seeds: 2,
        top_seeds: 2,
        repeatability_runs: 2,
        artifacts: true,
        ..ExperimentConfig::default()
    };
    cfg.arm_excitation = ArmExcitationConfig {
        duration: 2.0,
        ..cfg.arm_excitation
    };
    cfg.ball_excitation = BallExcitationConfig {
        duration: 6.0,
        repeats: 1,
        ..cfg.ball_excitation
    };
    cfg.arm_identification = ArmIdentConfig::default();
    cfg.arm_identification.optimizer.max_iters = 20;
    cfg.train = TrainConfig {
        n_iters: 3,
        n_samples: 8,
        ..cfg.train
    };
    cfg
}

#[test]
fn report_is_complete_and_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let report = run_experiment(&cfg, Some(dir.path()), Execution::Parallel).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert!(report.data.total_seconds <= 240.0);
    assert_eq!(report.data.total_seconds, 8.0);
    assert!(report.arm_fit.is_some());
    let l = &report.lengths[0];
    assert!(l.string_fit.is_some() && l.ball_excitation.is_some());
    assert_eq!(l.methods.len(), 2);
    for m in &l.methods {
        assert_eq!(m.oracle_accesses_during_training, 0);
        assert_eq!(m.seeds.len(), 2);
    }
    assert_eq!(report.table.len(), 2);
    for f in [
        "data/arm_excitation.csv",
        "fits/arm.json",
        "fits/string_040.json",
        "policies/diffnea_040_seed1.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn documents_round_trip_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let report = run_experiment(&cfg, Some(dir.path()), Execution::Sequential).unwrap();
    let path = dir.path().join("report.json");
    let back: ExperimentReport = read_document(&path, "experiment_report").unwrap();
    assert_eq!(back, report);
    let again = dir.path().join("again.json");
    write_json(&again, &Document::new("experiment_report", &back)).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
    let cfg_path = dir.path().join("config.json");
    let back: ExperimentConfig = diffnea_harness::report::read_json(&cfg_path).unwrap();
    assert_eq!(back, cfg);
    let policy = dir.path().join("policies/nominal_040_seed0.json");
    let weights: diffnea_core::policy::TrainResult = read_document(&policy, "policy").unwrap();
    let again = dir.path().join("policy_again.json");
    write_json(&again, &Document::new("policy", &weights)).unwrap();
    assert_eq!(
        std::fs::read(&policy).unwrap(),
        std::fs::read(&again).unwrap()
    );
}

#[test]
fn execution_modes_agree() {
    let cfg = ExperimentConfig {
        methods: vec![Method::Nominal],
        artifacts: false,
        ..tiny()
    };
    let a = run_experiment(&cfg, None, Execution::Parallel).unwrap();
    let b = run_experiment(&cfg, None, Execution::Sequential).unwrap();
    assert_eq!(a, b);
}

#[test]
fn failed_stage_skips_its_dependents() {
    let mut cfg = tiny();
    // 333 Hz does not divide the oracle rate, so recording the ball fails
    cfg.ball_excitation.rate = 333.0;
    let report = run_experiment(&cfg, None, Execution::Parallel).unwrap();
    assert_eq!(report.failures.len(), 1);
    let f = &report.failures[0];
    assert_eq!(
        (f.stage.as_str(), f.length, f.exit_code),
        ("string_identification", Some(0.4), 2)
    );
    let l = &report.lengths[0];
    assert!(l.string_fit.is_none());
    assert_eq!(
        l.methods.iter().map(|m| m.method).collect::<Vec<_>>(),
        vec![Method::Nominal]
    );
}

#[test]
fn over_budget_data_is_rejected() {
    let mut cfg = tiny();
    cfg.ball_excitation.duration = 40.0;
    cfg.ball_excitation.repeats = 6;
    assert!(run_experiment(&cfg, None, Execution::Parallel).is_err());
    cfg.methods = vec![Method::Nominal];
    assert!(run_experiment(
        &ExperimentConfig {
            artifacts: false,
            ..cfg
        },
        None,
        Execution::Parallel
    )
    .is_ok());
}
