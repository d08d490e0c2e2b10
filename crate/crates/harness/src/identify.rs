//! Arm and string identification on recorded datasets.

use diffnea_core::dynamics::KinematicTree;
use diffnea_core::string::StringModelParams;
use diffnea_core::sysid::{
    cup_motion, identify, identify_string, string_identification_mask, ArmLoss, ArmSample,
    BallSample, FitReport, LossConfig, LossKind, OptimizerConfig, PenaltyWeights,
};
use diffnea_core::virtual_params::check_plausible;
use diffnea_core::Execution;
use serde::{Deserialize, Serialize};

use crate::arm;
use crate::error::{HarnessError, Result};

/// Tolerance of the plausibility check applied to every identified link.
pub const PLAUSIBILITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmIdentConfig {
    /// `Inverse` (torque residuals) or `Forward` (acceleration residuals).
    pub loss: LossKind,
    pub optimizer: OptimizerConfig,
}

impl Default for ArmIdentConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Inverse,
            optimizer: OptimizerConfig {
                restarts: 1,
                ..OptimizerConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StringIdentConfig {
    pub loss: LossConfig,
    /// Softplus sharpness schedule, one optimizer run per value.
    pub betas: Vec<f64>,
    /// The initial length is this quantile of the ball distance to the
    /// nominal cup over the dataset.
    pub initial_quantile: f64,
    /// Fit the ball drag too. Off by default: the drag barely changes the
    /// loss on swing data and then drifts far from the true value.
    pub identify_drag: bool,
    pub optimizer: OptimizerConfig,
}

impl Default for StringIdentConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig {
                kind: LossKind::Constrained,
                weights: PenaltyWeights {
                    g: 1.0,
                    g_dot: 1e5,
                    g_ddot: 1.0,
                },
                soft: true,
            },
            betas: vec![1e3, 1e4],
            initial_quantile: 0.99,
            identify_drag: false,
            optimizer: OptimizerConfig {
                restarts: 1,
                max_iters: 100,
                ..OptimizerConfig::default()
            },
        }
    }
}

/// Fit the inertial and friction parameters of `nominal` to arm samples.
pub fn identify_arm(
    nominal: &KinematicTree,
    samples: &[ArmSample],
    cfg: &ArmIdentConfig,
    exec: Execution,
) -> Result<(KinematicTree, FitReport)> {
    let loss = ArmLoss::new(nominal, samples, cfg.loss)?;
    let mask = arm::arm_identification_mask(nominal);
    let report = identify(&loss, &nominal.params(), Some(&mask), &cfg.optimizer, exec)?;
    let tree = nominal.with_params(&report.params)?;
    check_tree(&tree)?;
    Ok((tree, report))
}

/// Every realized link inertia of `tree` passes the plausibility suite.
pub fn check_tree(tree: &KinematicTree) -> Result<()> {
    for inertia in &tree.realize().inertias {
        check_plausible(inertia, PLAUSIBILITY_TOL)?;
    }
    Ok(())
}

/// `q`-quantile of the ball distance to the cup of `p` over `samples`.
pub fn length_quantile(p: &StringModelParams, samples: &[BallSample], q: f64) -> Result<f64> {
    if samples.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(HarnessError::Validation(
            "length quantile needs samples and q in [0, 1]".into(),
        ));
    }
    let mut d: Vec<f64> = samples
        .iter()
        .map(|s| (s.ball.position - cup_motion(&s.link, p).position).norm())
        .collect();
    d.sort_by(f64::total_cmp);
    Ok(d[((d.len() - 1) as f64 * q).round() as usize])
}

/// Fit cup offset and length (and optionally drag) of the string, starting
/// from `nominal` with its length replaced by a data quantile.
pub fn identify_string_model(
    nominal: &StringModelParams,
    samples: &[BallSample],
    cfg: &StringIdentConfig,
    exec: Execution,
) -> Result<(StringModelParams, FitReport)> {
    let r0 = length_quantile(nominal, samples, cfg.initial_quantile)?;
    let mut init =
        StringModelParams::new(nominal.cup_offset, r0, nominal.ball_mass(), nominal.drag())?;
    init.settings = nominal.settings;
    let mask = string_identification_mask(cfg.identify_drag);
    let report = identify_string(
        &init,
        samples,
        &cfg.loss,
        &cfg.betas,
        Some(&mask),
        &cfg.optimizer,
        exec,
    )?;
    let fitted = init.with_params::<f64>(&report.params)?;
    Ok((fitted, report))
}
