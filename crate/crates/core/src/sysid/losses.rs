use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ResidualModel;
use crate::dynamics::{aba, rnea, KinematicTree, LinkMotion};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::scalar::Real;
use crate::se3::Vec3;
use crate::string::{
    ball_acceleration, constraint_derivatives, constraint_second_derivative, BallState,
    ConstraintMode, CupMotion, StringModelParams, STRING_PARAM_COUNT,
};
use crate::virtual_params::KINEMATIC_PARAM_COUNT;

/// One arm measurement: joint state and applied torque.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSample {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Acceleration residual through ABA.
    Forward,
    /// Torque residual through RNEA.
    Inverse,
    /// Ball acceleration residual plus constraint penalties.
    Constrained,
}

/// Weights of the constraint penalty terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyWeights {
    pub g: f64,
    pub g_dot: f64,
    pub g_ddot: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self {
            g: 1.0,
            g_dot: 1.0,
            g_ddot: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub weights: PenaltyWeights,
    /// Use the softplus relaxation of the constraint (identification default).
    pub soft: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Inverse,
            weights: PenaltyWeights::default(),
            soft: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        if !(w.g >= 0.0 && w.g_dot >= 0.0 && w.g_ddot >= 0.0) {
            return Err(Error::Config(format!(
                "penalty weights must be nonnegative, got {w:?}"
            )));
        }
        Ok(())
    }
}

/// Mean squared torque or acceleration residual of a kinematic tree.
pub struct ArmLoss<'a> {
    tree: &'a KinematicTree,
    samples: &'a [ArmSample],
    kind: LossKind,
}

impl<'a> ArmLoss<'a> {
    pub fn new(tree: &'a KinematicTree, samples: &'a [ArmSample], kind: LossKind) -> Result<Self> {
        if kind == LossKind::Constrained {
            return Err(Error::Config(
                "arm identification uses the forward or inverse loss".into(),
            ));
        }
        let n = tree.dof();
        for s in samples {
            for (what, v) in [("q", &s.q), ("qd", &s.qd), ("qdd", &s.qdd), ("u", &s.u)] {
                if v.len() != n {
                    return Err(Error::Dimension {
                        what,
                        expected: n,
                        got: v.len(),
                    });
                }
            }
        }
        Ok(Self {
            tree,
            samples,
            kind,
        })
    }
}

fn lift<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x)).collect()
}

impl ResidualModel for ArmLoss<'_> {
    fn param_count(&self) -> usize {
        self.tree.param_count()
    }

    fn row_count(&self) -> usize {
        self.samples.len()
    }

    fn row_width(&self) -> usize {
        self.tree.dof()
    }

    fn residuals<T: Real>(&self, params: &[T], exec: Execution) -> Result<Vec<T>> {
        let rt = self.tree.realize_with(params)?;
        let kind = self.kind;
        let rows = exec.map_slice(self.samples, |s| -> Result<Vec<T>> {
            let (q, qd) = (lift::<T>(&s.q), lift::<T>(&s.qd));
            Ok(match kind {
                LossKind::Inverse => {
                    let u = rnea(&rt, &q, &qd, &lift::<T>(&s.qdd))?.torques;
                    u.iter().zip(&s.u).map(|(&a, &b)| a - b).collect()
                }
                _ => {
                    let qdd = aba(&rt, &q, &qd, &lift::<T>(&s.u))?.qdd;
                    qdd.iter().zip(&s.qdd).map(|(&a, &b)| a - b).collect()
                }
            })
        });
        let mut out = Vec::with_capacity(self.samples.len() * self.tree.dof());
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }
}

/// Mean squared torque residual via RNEA.
pub fn inverse_dynamics_loss(
    tree: &KinematicTree,
    samples: &[ArmSample],
    exec: Execution,
) -> Result<f64> {
    super::loss(
        &ArmLoss::new(tree, samples, LossKind::Inverse)?,
        &tree.params(),
        exec,
    )
}

/// Mean squared acceleration residual via ABA.
pub fn forward_dynamics_loss(
    tree: &KinematicTree,
    samples: &[ArmSample],
    exec: Execution,
) -> Result<f64> {
    super::loss(
        &ArmLoss::new(tree, samples, LossKind::Forward)?,
        &tree.params(),
        exec,
    )
}

/// One ball measurement together with the motion of the last arm link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallSample {
    pub link: LinkMotion<f64>,
    pub ball: BallState<f64>,
    pub ball_acc: Vec3<f64>,
}

/// Cup motion implied by the last-link motion and the cup offset.
pub fn cup_motion<T: Real>(link: &LinkMotion<T>, p: &StringModelParams<T>) -> CupMotion<T> {
    let te = p.cup_transform();
    let (position, velocity, acceleration) = link.point_motion(&te.translation);
    let normal = link.pose.rotation.mul_vec(&te.rotation.col(2));
    CupMotion {
        position,
        velocity,
        acceleration,
        normal,
    }
}

/// Ball acceleration residual with penalties on `g`, `ġ` and `g̈`.
///
/// Each row holds `[ẍ_pred − ẍ (3), √λ_g g, √λ_ġ ġ, √λ_g̈ g̈]`.
pub struct StringLoss<'a> {
    template: StringModelParams,
    samples: &'a [BallSample],
    weights: PenaltyWeights,
    mode: ConstraintMode,
}

impl<'a> StringLoss<'a> {
    /// `template` provides the fixed solver settings; its parameters are the
    /// default point for [`StringLoss::params`].
    pub fn new(
        template: StringModelParams,
        samples: &'a [BallSample],
        cfg: &LossConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mode = if cfg.soft {
            ConstraintMode::Soft
        } else {
            ConstraintMode::Hard
        };
        Ok(Self {
            template,
            samples,
            weights: cfg.weights,
            mode,
        })
    }

    pub fn params(&self) -> Vec<f64> {
        self.template.params()
    }

    fn terms<T: Real>(&self, p: &StringModelParams<T>, s: &BallSample) -> ([T; 3], T, T, T) {
        let link = LinkMotion::lift(&s.link);
        let cup = cup_motion(&link, p);
        let ball = BallState::new(Vec3::lift(&s.ball.position), Vec3::lift(&s.ball.velocity));
        let meas = Vec3::lift(&s.ball_acc);
        let acc = ball_acceleration(&ball, &cup, p, self.mode);
        let d = constraint_derivatives(&ball, &cup, p, self.mode);
        let g_ddot = constraint_second_derivative(&ball, &meas, &cup, p, self.mode);
        ((acc - meas).to_array(), d.g, d.g_dot, g_ddot)
    }
}

impl ResidualModel for StringLoss<'_> {
    fn param_count(&self) -> usize {
        STRING_PARAM_COUNT
    }

    fn row_count(&self) -> usize {
        self.samples.len()
    }

    fn row_width(&self) -> usize {
        6
    }

    fn residuals<T: Real>(&self, params: &[T], exec: Execution) -> Result<Vec<T>> {
        let p = self.template.with_params(params)?;
        let w = [
            self.weights.g.sqrt(),
            self.weights.g_dot.sqrt(),
            self.weights.g_ddot.sqrt(),
        ];
        let rows = exec.map_slice(self.samples, |s| {
            let (e, g, gd, gdd) = self.terms(&p, s);
            [e[0], e[1], e[2], g * w[0], gd * w[1], gdd * w[2]]
        });
        Ok(rows.into_iter().flatten().collect())
    }

    fn breakdown(&self, params: &[f64], exec: Execution) -> Result<BTreeMap<String, f64>> {
        let p = self.template.with_params(params)?;
        let rows = exec.map_slice(self.samples, |s| {
            let (e, g, gd, gdd) = self.terms(&p, s);
            [
                e[0] * e[0] + e[1] * e[1] + e[2] * e[2],
                g * g,
                gd * gd,
                gdd * gdd,
            ]
        });
        let n = self.samples.len().max(1) as f64;
        let mut sums = [0.0; 4];
        for r in &rows {
            for k in 0..4 {
                sums[k] += r[k];
            }
        }
        let mean = sums.map(|s| s / n);
        let total = mean[0]
            + self.weights.g * mean[1]
            + self.weights.g_dot * mean[2]
            + self.weights.g_ddot * mean[3];
        Ok(BTreeMap::from([
            ("acceleration".to_string(), mean[0]),
            ("g".to_string(), mean[1]),
            ("g_dot".to_string(), mean[2]),
            ("g_ddot".to_string(), mean[3]),
            ("total".to_string(), total),
        ]))
    }
}

/// Constrained string loss with its per-term breakdown.
pub fn string_constrained_loss(
    params: &StringModelParams,
    samples: &[BallSample],
    cfg: &LossConfig,
    exec: Execution,
) -> Result<BTreeMap<String, f64>> {
    let model = StringLoss::new(*params, samples, cfg)?;
    super::loss(&model, &params.params(), exec)?;
    model.breakdown(&params.params(), exec)
}

/// Free string parameters during identification: cup translation, `√r` and,
/// if `drag` is set, `√c_d`. The cup rotation never enters the ball dynamics
/// and `m_B` cancels in `ẍ_B`, so both stay at their initial values.
pub fn string_identification_mask(drag: bool) -> Vec<bool> {
    let mut m = vec![false; STRING_PARAM_COUNT];
    m[3..6].iter_mut().for_each(|x| *x = true);
    m[KINEMATIC_PARAM_COUNT] = true;
    m[KINEMATIC_PARAM_COUNT + 2] = drag;
    m
}

/// Identify string parameters through a sequence of soft-gate sharpness
/// values `betas`, each stage starting from the previous optimum.
///
/// A small `β` keeps gradients alive when the initial length puts every
/// sample on the slack side; the last stage fixes the reported fit. Only
/// the first stage uses random restarts.
pub fn identify_string(
    template: &StringModelParams,
    samples: &[BallSample],
    loss_cfg: &LossConfig,
    betas: &[f64],
    mask: Option<&[bool]>,
    opt: &super::OptimizerConfig,
    exec: Execution,
) -> Result<super::FitReport> {
    if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::Config(format!(
            "continuation needs positive sharpness values, got {betas:?}"
        )));
    }
    let mut params = template.params();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut report = None;
    for (k, &beta) in betas.iter().enumerate() {
        let mut stage = *template;
        stage.settings.beta = beta;
        let model = StringLoss::new(stage, samples, loss_cfg)?;
        let cfg = if k == 0 {
            *opt
        } else {
            super::OptimizerConfig {
                restarts: 1,
                ..*opt
            }
        };
        let r = super::identify(&model, &params, mask, &cfg, exec)?;
        params.clone_from(&r.params);
        history.extend_from_slice(&r.history);
        iterations += r.iterations;
        report = Some(r);
    }
    let mut report = report.expect("at least one stage");
    let mut last = *template;
    last.settings.beta = *betas.last().expect("nonempty");
    report.initial_loss = super::loss(
        &StringLoss::new(last, samples, loss_cfg)?,
        &template.params(),
        exec,
    )?;
    report.iterations = iterations;
    report.history = history;
    Ok(report)
}
