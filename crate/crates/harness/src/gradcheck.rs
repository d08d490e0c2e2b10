//! Randomized comparison of dual-number loss gradients with finite
//! differences for the inverse, forward and string losses.

use diffnea_core::dynamics::{forward_kinematics, KinematicTree};
use diffnea_core::se3::Vec3;
use diffnea_core::string::{BallState, StringModelParams};
use diffnea_core::sysid::{
    cup_motion, gradient_check, ArmLoss, ArmSample, BallSample, LossConfig, LossKind,
    PenaltyWeights, StringLoss,
};
use diffnea_core::virtual_params::VirtualKinematicParams;
use diffnea_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    /// Random configurations per loss.
    pub configs: usize,
    /// Random directions per configuration.
    pub directions: usize,
    pub samples: usize,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            configs: 50,
            directions: 3,
            samples: 4,
            tolerance: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossGradcheck {
    pub loss: String,
    pub configs: usize,
    pub max_rel_error: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub losses: Vec<LossGradcheck>,
    pub passed: bool,
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn arm_samples(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<ArmSample> {
    (0..count)
        .map(|_| ArmSample {
            q: normal(rng, n),
            qd: normal(rng, n),
            qdd: normal(rng, n),
            u: normal(rng, n),
        })
        .collect()
}

/// Ball samples scattered around the cup: both sides of the string length,
/// so taut and slack branches are exercised.
fn ball_samples(
    rng: &mut ChaCha8Rng,
    tree: &KinematicTree,
    p: &StringModelParams,
    count: usize,
) -> Result<Vec<BallSample>> {
    let n = tree.dof();
    let rt = tree.realize();
    (0..count)
        .map(|_| {
            let links = forward_kinematics(&rt, &normal(rng, n), &normal(rng, n), &normal(rng, n))?;
            let link = *links.last().expect("tree has links");
            let cup = cup_motion(&link, p);
            let v = normal(rng, 3);
            let dir = Vec3::new(v[0], v[1], v[2]);
            let dist = p.length() * rng.random_range(0.9..1.1);
            let position = cup.position + dir.scale(dist / dir.norm());
            let w = normal(rng, 6);
            Ok(BallSample {
                link,
                ball: BallState::new(position, Vec3::new(w[0], w[1], w[2])),
                ball_acc: Vec3::new(w[3], w[4], w[5]),
            })
        })
        .collect()
}

fn summarize(loss: &str, errors: &[f64], tolerance: f64) -> LossGradcheck {
    LossGradcheck {
        loss: loss.into(),
        configs: errors.len(),
        max_rel_error: errors.iter().copied().fold(0.0, f64::max),
        failures: errors.iter().filter(|e| !(**e < tolerance)).count(),
    }
}

/// Check all three losses on `cfg.configs` random trees and datasets each.
pub fn run_gradcheck(cfg: &GradcheckConfig, seed: u64, exec: Execution) -> Result<GradcheckReport> {
    if cfg.configs == 0 || cfg.directions == 0 || cfg.samples == 0 || !(cfg.tolerance > 0.0) {
        return Err(HarnessError::Validation(
            "gradient check needs positive counts and tolerance".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inverse = Vec::with_capacity(cfg.configs);
    let mut forward = Vec::with_capacity(cfg.configs);
    let mut string = Vec::with_capacity(cfg.configs);
    for _ in 0..cfg.configs {
        let n = rng.random_range(1..=5);
        let tree = KinematicTree::random(&mut rng, n);
        let samples = arm_samples(&mut rng, n, cfg.samples);
        let check_seed = rng.random();
        for (kind, out) in [
            (LossKind::Inverse, &mut inverse),
            (LossKind::Forward, &mut forward),
        ] {
            let loss = ArmLoss::new(&tree, &samples, kind)?;
            let r = gradient_check(
                &loss,
                &tree.params(),
                None,
                cfg.directions,
                cfg.tolerance,
                check_seed,
                exec,
            )?;
            out.push(r.max_rel_error);
        }

        let offset = VirtualKinematicParams {
            rpy: [
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ],
            translation: [
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.4),
            ],
        };
        let p = StringModelParams::new(
            offset,
            rng.random_range(0.3..0.5),
            rng.random_range(0.01..0.05),
            rng.random_range(0.01..0.3),
        )?;
        let balls = ball_samples(&mut rng, &tree, &p, cfg.samples)?;
        let loss_cfg = LossConfig {
            kind: LossKind::Constrained,
            weights: PenaltyWeights {
                g: 1.0,
                g_dot: 1.0,
                g_ddot: 1.0,
            },
            soft: true,
        };
        let loss = StringLoss::new(p, &balls, &loss_cfg)?;
        let r = gradient_check(
            &loss,
            &p.params(),
            None,
            cfg.directions,
            cfg.tolerance,
            check_seed,
            exec,
        )?;
        string.push(r.max_rel_error);
    }
    let losses = vec![
        summarize("inverse", &inverse, cfg.tolerance),
        summarize("forward", &forward, cfg.tolerance),
        summarize("string", &string, cfg.tolerance),
    ];
    let passed = losses.iter().all(|l| l.failures == 0);
    Ok(GradcheckReport {
        seed,
        tolerance: cfg.tolerance,
        losses,
        passed,
    })
}
