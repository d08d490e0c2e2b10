use diffnea_core::dynamics::rnea;
use diffnea_harness::arm;
use diffnea_harness::dataset::{vector_columns, TrajectoryDataset};
use diffnea_harness::error::HarnessError;
use diffnea_harness::excitation::{
    base_parameter_condition, cosine_schedule, generate_arm_excitation, generate_ball_excitation,
    ArmExcitationConfig, BallExcitationConfig,
};
use diffnea_harness::oracle::Oracle;
use diffnea_harness::report::{read_document, write_json, Document};

fn short_arm(seconds: f64) -> ArmExcitationConfig {
    ArmExcitationConfig {
        duration: seconds,
        ..ArmExcitationConfig::default()
    }
}

fn short_ball(seconds: f64, repeats: usize, noise: f64) -> BallExcitationConfig {
    BallExcitationConfig {
        duration: seconds,
        repeats,
        position_noise: noise,
        seed: 11,
        ..BallExcitationConfig::default()
    }
}

#[test]
fn default_arm_excitation_has_twenty_thousand_rows() {
    let ds = generate_arm_excitation(&arm::true_arm(), &ArmExcitationConfig::default()).unwrap();
    assert_eq!(ds.len(), 20000);
    assert_eq!(ds.rate, 500.0);
    ds.validate().unwrap();
}

#[test]
fn csv_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_arm_excitation(
        &arm::true_arm(),
        &ArmExcitationConfig {
            torque_noise: 0.05,
            ..short_arm(2.0)
        },
    )
    .unwrap();
    let first = ds.write(&dir.path().join("a"), "arm").unwrap();
    let back = TrajectoryDataset::read(&first).unwrap();
    assert_eq!(back, ds);
    let second = back.write(&dir.path().join("b"), "arm").unwrap();
    for ext in ["csv", "json"] {
        let a = std::fs::read(first.with_extension(ext)).unwrap();
        let b = std::fs::read(second.with_extension(ext)).unwrap();
        assert_eq!(a, b, "{ext} differs");
    }
}

#[test]
fn mismatched_header_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_arm_excitation(&arm::true_arm(), &short_arm(0.1)).unwrap();
    let manifest = ds.write(dir.path(), "arm").unwrap();
    let csv = manifest.with_extension("csv");
    let text = std::fs::read_to_string(&csv)
        .unwrap()
        .replacen("q0", "p0", 1);
    std::fs::write(&csv, text).unwrap();
    assert!(matches!(
        TrajectoryDataset::read(&manifest),
        Err(HarnessError::Format { .. })
    ));
}

#[test]
fn documents_check_version_and_kind() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("doc.json");
    write_json(&path, &Document::new("policy_weights", vec![1.0, 2.0])).unwrap();
    let w: Vec<f64> = read_document(&path, "policy_weights").unwrap();
    assert_eq!(w, vec![1.0, 2.0]);
    assert!(read_document::<Vec<f64>>(&path, "arm_fit").is_err());
    let mut doc = Document::new("policy_weights", vec![1.0]);
    doc.version = 99;
    write_json(&path, &doc).unwrap();
    assert!(read_document::<Vec<f64>>(&path, "policy_weights").is_err());
}

#[test]
fn zero_amplitude_holds_posture_with_gravity_compensation() {
    let truth = arm::true_arm();
    let cfg = ArmExcitationConfig {
        amplitudes: vec![0.0; 4],
        ..short_arm(1.0)
    };
    let ds = generate_arm_excitation(&truth, &cfg).unwrap();
    let gravity = rnea(&truth.realize(), &cfg.center, &[0.0; 4], &[0.0; 4])
        .unwrap()
        .torques;
    for s in ds.arm_samples(None).unwrap() {
        assert_eq!(s.q, cfg.center);
        assert!(s.qd.iter().chain(&s.qdd).all(|v| *v == 0.0));
        for (u, g) in s.u.iter().zip(&gravity) {
            assert!((u - g).abs() < 1e-12);
        }
    }
}

#[test]
fn excursions_beyond_the_joint_limits_are_rejected() {
    let cfg = ArmExcitationConfig {
        amplitudes: vec![1.2, 2.5, 1.4, 1.1],
        ..short_arm(1.0)
    };
    assert!(matches!(
        generate_arm_excitation(&arm::true_arm(), &cfg),
        Err(HarnessError::Validation(_))
    ));
}

#[test]
fn default_excitation_is_well_conditioned() {
    let truth = arm::true_arm();
    let ds = generate_arm_excitation(&truth, &ArmExcitationConfig::default()).unwrap();
    let samples: Vec<_> = ds
        .arm_samples(None)
        .unwrap()
        .into_iter()
        .step_by(10)
        .collect();
    let report = base_parameter_condition(&truth, &samples).unwrap();
    assert!(report.rank > 0 && report.rank < report.parameters);
    assert!(report.condition < 1e6, "{report:?}");
}

#[test]
fn noise_free_single_repeat_is_the_raw_oracle_trajectory() {
    let oracle = Oracle::standard(0.4).unwrap();
    let cfg = short_ball(3.0, 1, 0.0);
    let (ds, report) = generate_ball_excitation(&oracle, &oracle.arm, &cfg).unwrap();
    assert_eq!(report.retries, 0);
    let dt = oracle.config.dt;
    let desired = cosine_schedule(
        &arm::HOME_POSTURE,
        &cfg.amplitudes,
        &cfg.frequencies,
        cfg.duration,
        dt,
    );
    let raw = oracle.rollout(&desired, &oracle.arm).unwrap();
    let sub = (1.0 / (cfg.rate * dt)).round() as usize;
    let xb: Vec<Vec<f64>> = vector_columns("xb")
        .iter()
        .map(|c| ds.column(c).unwrap())
        .collect();
    for i in 0..ds.len() {
        let x = raw.ball[i * sub].position.to_array();
        for a in 0..3 {
            assert_eq!(xb[a][i], x[a]);
        }
        for j in 0..4 {
            assert_eq!(ds.column(&format!("q{j}")).unwrap()[i], raw.q[i * sub][j]);
        }
    }
}

#[test]
fn averaging_repeats_shrinks_the_noise() {
    let oracle = Oracle::standard(0.4).unwrap();
    let sigma = 1e-3;
    let (clean, _) =
        generate_ball_excitation(&oracle, &oracle.arm, &short_ball(4.0, 1, 0.0)).unwrap();
    let spread = |repeats: usize| {
        let (noisy, _) =
            generate_ball_excitation(&oracle, &oracle.arm, &short_ball(4.0, repeats, sigma))
                .unwrap();
        let mut sq = 0.0;
        let mut n = 0;
        for c in vector_columns("xb") {
            for (a, b) in noisy
                .column(&c)
                .unwrap()
                .iter()
                .zip(clean.column(&c).unwrap())
            {
                sq += (a - b).powi(2);
                n += 1;
            }
        }
        (sq / n as f64).sqrt()
    };
    let one = spread(1);
    let five = spread(5);
    assert!(
        (one / sigma - 1.0).abs() < 0.05,
        "single repeat spread {one}"
    );
    let ratio = one / five;
    assert!((ratio / 5f64.sqrt() - 1.0).abs() < 0.2, "reduction {ratio}");
}

#[test]
fn default_ball_schedule_is_partly_taut() {
    let oracle = Oracle::standard(0.4).unwrap();
    let cfg = BallExcitationConfig {
        repeats: 1,
        ..BallExcitationConfig::default()
    };
    let (ds, report) = generate_ball_excitation(&oracle, &oracle.arm, &cfg).unwrap();
    assert_eq!(ds.len(), 20000);
    assert!(
        report.taut_fraction > 0.2 && report.taut_fraction < 0.9,
        "{report:?}"
    );
    assert!(report.min_clearance >= oracle.config.clearance);
}
