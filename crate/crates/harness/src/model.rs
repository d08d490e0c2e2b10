//! The learned model the policy is trained in: the identified arm and string,
//! with the arm assumed to track its reference exactly.
//!
//! Under a computed-torque controller whose feedforward is the identified
//! arm, the model's own closed loop tracks perfectly, so only kinematics are
//! needed to move the cup. The ball follows the analytic string model in hard
//! mode, starting at rest below the cup.

use diffnea_core::dynamics::{forward_kinematics, KinematicTree};
use diffnea_core::policy::{
    episode_reward, JointTrajectory, RewardConfig, RolloutStates, TrajectoryGenerator,
};
use diffnea_core::se3::Vec3;
use diffnea_core::string::{simulate, BallState, CupMotion, StringModelParams};
use diffnea_core::sysid::cup_motion;
use diffnea_core::{Error as CoreError, Result as CoreResult};
use serde::{Deserialize, Serialize};

use crate::arm;
use crate::error::{HarnessError, Result};

/// Timing of one swing-up episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// Length of the movement primitive and of the rewarded window (s).
    pub duration: f64,
    /// Extra time the final posture is held on the oracle (s).
    pub hold: f64,
    pub dt: f64,
    pub n_basis: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            duration: 1.6,
            hold: 1.0,
            dt: 1e-3,
            n_basis: 8,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.hold >= 0.0 && self.dt > 0.0 && self.dt < self.duration)
            || self.n_basis < 2
        {
            return Err(HarnessError::Validation(format!(
                "invalid episode configuration {self:?}"
            )));
        }
        Ok(())
    }

    /// Number of samples in the rewarded window, including `t = 0`.
    pub fn reward_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }

    pub fn generator(&self) -> Result<TrajectoryGenerator> {
        Ok(TrajectoryGenerator::new(
            arm::HOME_POSTURE.to_vec(),
            arm::ACTIVE_JOINTS.to_vec(),
            self.n_basis,
            self.duration,
        )?)
    }

    /// Reference over the episode plus the hold period.
    pub fn reference(
        &self,
        generator: &TrajectoryGenerator,
        weights: &[f64],
    ) -> Result<JointTrajectory> {
        Ok(generator.rollout(weights, self.dt, self.duration + self.hold)?)
    }
}

/// Ball start: at rest, hanging straight below the cup anchor.
pub fn hanging_ball(cup: &CupMotion, length: f64) -> BallState {
    BallState::new(cup.position + Vec3::new(0.0, 0.0, -length), Vec3::zeros())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelRollout {
    pub cups: Vec<CupMotion>,
    pub ball: Vec<BallState>,
}

impl ModelRollout {
    /// Reward inputs for the first `steps` samples.
    pub fn states(&self, reference: &JointTrajectory, steps: usize) -> RolloutStates {
        reward_states(&reference.q, &reference.qd, &self.cups, &self.ball, steps)
    }
}

pub(crate) fn reward_states(
    q: &[Vec<f64>],
    qd: &[Vec<f64>],
    cups: &[CupMotion],
    ball: &[BallState],
    steps: usize,
) -> RolloutStates {
    let n = steps
        .min(cups.len())
        .min(ball.len())
        .min(q.len())
        .min(qd.len());
    RolloutStates {
        q: q[..n].to_vec(),
        qd: qd[..n].to_vec(),
        delta: (0..n)
            .map(|k| ball[k].position - cups[k].position)
            .collect(),
        normal: cups[..n].iter().map(|c| c.normal).collect(),
    }
}

/// Identified arm and string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedModel {
    pub arm: KinematicTree,
    pub string: StringModelParams,
}

impl LearnedModel {
    pub fn new(arm: KinematicTree, string: StringModelParams) -> Result<Self> {
        arm.validate()?;
        Ok(Self { arm, string })
    }

    pub fn rollout(&self, reference: &JointTrajectory) -> CoreResult<ModelRollout> {
        let tree = self.arm.realize();
        let cups = (0..reference.len())
            .map(|k| {
                let links = forward_kinematics(
                    &tree,
                    &reference.q[k],
                    &reference.qd[k],
                    &reference.qdd[k],
                )?;
                Ok(cup_motion(
                    links.last().expect("arm has links"),
                    &self.string,
                ))
            })
            .collect::<CoreResult<Vec<_>>>()?;
        let first = cups
            .first()
            .ok_or_else(|| CoreError::Config("empty trajectory".into()))?;
        let ball = simulate(
            hanging_ball(first, self.string.length()),
            &cups,
            &self.string,
            reference.dt,
        )?;
        Ok(ModelRollout { cups, ball })
    }

    /// Episode reward of `weights` inside the model.
    pub fn episode(
        &self,
        episode: &EpisodeConfig,
        generator: &TrajectoryGenerator,
        reward: &RewardConfig,
        weights: &[f64],
    ) -> CoreResult<f64> {
        let reference = generator.rollout(weights, episode.dt, episode.duration)?;
        let rollout = self.rollout(&reference)?;
        let states = rollout.states(&reference, episode.reward_steps());
        episode_reward(&states, &generator.q0, reward)
    }
}
