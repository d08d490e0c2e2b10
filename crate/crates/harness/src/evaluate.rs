//! Policy evaluation: expected reward in the learned model, actual reward and
//! catch success on the oracle.

use diffnea_core::dynamics::KinematicTree;
use diffnea_core::policy::{episode_reward, RewardConfig, TrajectoryGenerator};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::model::{EpisodeConfig, LearnedModel};
use crate::oracle::{Disturbance, Oracle, OracleRollout};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessConfig {
    /// Minimum uninterrupted time in the cup (s).
    pub min_in_cup: f64,
}

impl Default for SuccessConfig {
    fn default() -> Self {
        Self { min_in_cup: 0.5 }
    }
}

/// One execution of a policy mean on the oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEpisode {
    pub reward: f64,
    pub in_cup_seconds: f64,
    pub min_clearance: f64,
    pub success: bool,
    /// The arm or chain state blew up; reward and timings are zero.
    pub diverged: bool,
}

impl OracleEpisode {
    fn diverged() -> Self {
        Self {
            reward: 0.0,
            in_cup_seconds: 0.0,
            min_clearance: 0.0,
            success: false,
            diverged: true,
        }
    }
}

/// Expected and actual outcome of one trained policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    /// Reward inside the learned model.
    pub expected_reward: f64,
    pub actual: OracleEpisode,
}

/// Task definition shared by training and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub episode: EpisodeConfig,
    pub generator: TrajectoryGenerator,
    pub reward: RewardConfig,
    pub success: SuccessConfig,
}

impl Task {
    pub fn new(
        episode: EpisodeConfig,
        reward: RewardConfig,
        success: SuccessConfig,
    ) -> Result<Self> {
        episode.validate()?;
        Ok(Self {
            generator: episode.generator()?,
            episode,
            reward,
            success,
        })
    }

    /// Score a finished oracle rollout. Touching the arm counts as failure.
    pub fn judge(&self, oracle: &Oracle, rollout: &OracleRollout) -> Result<OracleEpisode> {
        let states = rollout.states(self.episode.reward_steps());
        let reward = episode_reward(&states, &self.generator.q0, &self.reward)?;
        let in_cup_seconds = rollout.longest_in_cup();
        Ok(OracleEpisode {
            reward,
            in_cup_seconds,
            min_clearance: rollout.min_clearance,
            success: in_cup_seconds >= self.success.min_in_cup
                && rollout.min_clearance >= oracle.config.clearance,
            diverged: false,
        })
    }

    /// Run `weights` on the oracle with `controller` as feedforward model.
    /// A diverging execution is a failed episode without a rollout.
    pub fn execute(
        &self,
        oracle: &Oracle,
        controller: &KinematicTree,
        weights: &[f64],
        disturbance: &Disturbance,
    ) -> Result<(Option<OracleRollout>, OracleEpisode)> {
        let reference = self.episode.reference(&self.generator, weights)?;
        match oracle.rollout_with(&reference, controller, disturbance) {
            Ok(rollout) => {
                let episode = self.judge(oracle, &rollout)?;
                Ok((Some(rollout), episode))
            }
            Err(HarnessError::Core(diffnea_core::Error::Divergence { .. })) => {
                Ok((None, OracleEpisode::diverged()))
            }
            Err(e) => Err(e),
        }
    }

    pub fn expected_reward(&self, model: &LearnedModel, weights: &[f64]) -> Result<f64> {
        Ok(model.episode(&self.episode, &self.generator, &self.reward, weights)?)
    }

    /// Expected reward in `model` and the undisturbed oracle outcome.
    pub fn evaluate(
        &self,
        model: &LearnedModel,
        oracle: &Oracle,
        controller: &KinematicTree,
        weights: &[f64],
    ) -> Result<PolicyEvaluation> {
        let expected_reward = self.expected_reward(model, weights)?;
        let (_, actual) = self.execute(oracle, controller, weights, &Disturbance::default())?;
        Ok(PolicyEvaluation {
            expected_reward,
            actual,
        })
    }

    /// Success rate of `weights` over `runs` executions with fresh torque
    /// noise drawn from consecutive seeds.
    pub fn repeatability(
        &self,
        oracle: &Oracle,
        controller: &KinematicTree,
        weights: &[f64],
        runs: usize,
        torque_std: f64,
        seed: u64,
    ) -> Result<f64> {
        if runs == 0 {
            return Ok(0.0);
        }
        let mut successes = 0;
        for i in 0..runs {
            let d = Disturbance {
                torque_std,
                seed: seed.wrapping_add(i as u64),
            };
            if self.execute(oracle, controller, weights, &d)?.1.success {
                successes += 1;
            }
        }
        Ok(successes as f64 / runs as f64)
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
