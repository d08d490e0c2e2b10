//! End-to-end offline model-based RL experiment.
//!
//! Datasets are generated first, then the arm and string are identified,
//! policies are trained inside the identified model only, and finally each
//! trained policy is executed on the oracle. The oracle access counter is
//! checked around every training run.

use std::path::{Path, PathBuf};

use diffnea_core::dynamics::{rnea, KinematicTree};
use diffnea_core::policy::{
    train_offline, PolicyDistribution, RewardConfig, TrainConfig, TrainResult,
};
use diffnea_core::string::StringModelParams;
use diffnea_core::sysid::{ArmSample, FitReport};
use diffnea_core::Execution;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm;
use crate::dataset::TrajectoryDataset;
use crate::error::{HarnessError, Result};
use crate::evaluate::{mean_std, OracleEpisode, SuccessConfig, Task};
use crate::excitation::{
    generate_arm_excitation, generate_ball_excitation, ArmExcitationConfig, BallExcitationConfig,
    BallExcitationReport,
};
use crate::gradcheck::GradcheckConfig;
use crate::identify::{
    identify_arm, identify_string_model, length_quantile, ArmIdentConfig, StringIdentConfig,
};
use crate::model::{EpisodeConfig, LearnedModel};
use crate::oracle::{Oracle, OracleConfig, OracleRollout};
use crate::report::{write_json, Document};

/// Which model the policies are trained in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Identified arm and string.
    Diffnea,
    /// CAD arm and analytic string with the true length, no identification.
    Nominal,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Diffnea => "DiffNEA",
            Method::Nominal => "Nominal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub lengths: Vec<f64>,
    pub methods: Vec<Method>,
    pub oracle: OracleConfig,
    pub arm_excitation: ArmExcitationConfig,
    pub ball_excitation: BallExcitationConfig,
    pub arm_identification: ArmIdentConfig,
    pub string_identification: StringIdentConfig,
    pub episode: EpisodeConfig,
    pub reward: RewardConfig,
    pub success: SuccessConfig,
    pub train: TrainConfig,
    /// Initial isotropic variance of the policy weights (rad²).
    pub initial_variance: f64,
    pub rl_seeds: usize,
    /// Seeds averaged in the reward column, ranked by oracle reward.
    pub top_seeds: usize,
    pub repeatability_runs: usize,
    /// Torque noise of the repeatability executions (N·m).
    pub execution_noise: f64,
    /// Upper bound on recorded identification data (s).
    pub max_data_seconds: f64,
    /// Write datasets, fits, policies and trajectory dumps next to the report.
    pub artifacts: bool,
    pub gradcheck: GradcheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: crate::report::FORMAT_VERSION,
            seed: 0,
            lengths: vec![0.35, 0.40, 0.45],
            methods: vec![Method::Diffnea, Method::Nominal],
            oracle: OracleConfig::default(),
            arm_excitation: ArmExcitationConfig {
                torque_noise: 0.05,
                ..ArmExcitationConfig::default()
            },
            ball_excitation: BallExcitationConfig {
                position_noise: 1e-3,
                ..BallExcitationConfig::default()
            },
            arm_identification: ArmIdentConfig::default(),
            string_identification: StringIdentConfig::default(),
            episode: EpisodeConfig::default(),
            reward: RewardConfig::default(),
            success: SuccessConfig::default(),
            train: TrainConfig::default(),
            initial_variance: 0.25,
            rl_seeds: 10,
            top_seeds: 10,
            repeatability_runs: 10,
            execution_noise: 0.5,
            max_data_seconds: 240.0,
            artifacts: true,
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Validation(m.to_string()));
        if self.lengths.is_empty() || self.lengths.iter().any(|l| !(*l > 0.0)) {
            return bad("string lengths must be positive");
        }
        if self.methods.is_empty() {
            return bad("at least one method is required");
        }
        if self.rl_seeds == 0 || self.top_seeds == 0 || self.train.n_samples < 2 {
            return bad("need ≥ 1 RL seed, ≥ 1 ranked seed and ≥ 2 samples per iteration");
        }
        if !(self.initial_variance > 0.0) || !(self.execution_noise >= 0.0) {
            return bad("initial variance must be positive and execution noise nonnegative");
        }
        if self.methods.contains(&Method::Diffnea)
            && self.data_seconds() > self.max_data_seconds + 1e-9
        {
            return Err(HarnessError::Validation(format!(
                "identification data of {} s exceeds the budget of {} s",
                self.data_seconds(),
                self.max_data_seconds
            )));
        }
        self.oracle.validate()?;
        self.episode.validate()?;
        Ok(())
    }

    /// Recorded seconds used for identification of one string length.
    pub fn data_seconds(&self) -> f64 {
        self.arm_excitation.duration
            + self.ball_excitation.duration * self.ball_excitation.repeats as f64
    }
}

/// Named seed stream derived from the experiment seed.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

pub const STREAM_ARM_DATA: u64 = 1;
pub const STREAM_HELDOUT: u64 = 2;
pub const STREAM_NOMINAL: u64 = 3;
pub const STREAM_BALL_DATA: u64 = 4;
pub const STREAM_RL: u64 = 5;
pub const STREAM_REPEAT: u64 = 6;

/// Recorded identification data per string length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataBudget {
    pub arm_seconds: f64,
    pub ball_seconds: f64,
    pub total_seconds: f64,
    pub limit_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmFitSummary {
    pub initial_loss: f64,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Torque RMSE on a held-out excitation with fresh phases and noise.
    pub heldout_rmse: f64,
    pub noise_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StringFitSummary {
    pub initial_length: f64,
    pub length: f64,
    pub relative_error: f64,
    pub drag: f64,
    pub cup_translation: [f64; 3],
    pub loss: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Reward of the final policy mean inside the training model.
    pub expected_reward: f64,
    pub actual: OracleEpisode,
    pub final_mean_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub length: f64,
    pub oracle_accesses_during_training: usize,
    pub seeds: Vec<SeedResult>,
    pub avg_reward: f64,
    pub std_reward: f64,
    pub transferability: f64,
    pub repeatability: f64,
    /// Seed whose policy was repeated: the best successful one, if any.
    pub best_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthReport {
    pub length: f64,
    pub ball_excitation: Option<BallExcitationReport>,
    pub string_fit: Option<StringFitSummary>,
    pub methods: Vec<MethodResult>,
}

/// One row of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub length: f64,
    pub avg_reward: f64,
    pub std_reward: f64,
    pub transferability: f64,
    pub repeatability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub data: DataBudget,
    pub arm_fit: Option<ArmFitSummary>,
    pub lengths: Vec<LengthReport>,
    pub table: Vec<TableRow>,
    pub failures: Vec<StageFailure>,
}

impl ExperimentReport {
    /// Plain-text table: one row per method and string length.
    pub fn table_text(&self) -> String {
        let mut out = String::from(
            "| model | length (m) | avg. reward | transferability | repeatability |\n",
        );
        out.push_str("|---|---|---|---|---|\n");
        for r in &self.table {
            out.push_str(&format!(
                "| {} | {:.2} | {:.2} ± {:.2} | {:.0}% | {:.0}% |\n",
                r.method,
                r.length,
                r.avg_reward,
                r.std_reward,
                100.0 * r.transferability,
                100.0 * r.repeatability
            ));
        }
        out
    }
}

/// Training model and the feedforward model used on the oracle.
pub struct Identified {
    pub controller: KinematicTree,
    pub model: LearnedModel,
}

/// Torque prediction RMSE of `tree` over `samples`.
pub fn torque_rmse(tree: &KinematicTree, samples: &[ArmSample]) -> Result<f64> {
    let rt = tree.realize();
    let mut se = 0.0;
    let mut count = 0usize;
    for s in samples {
        let u = rnea(&rt, &s.q, &s.qd, &s.qdd)?.torques;
        for (a, b) in u.iter().zip(&s.u) {
            se += (a - b).powi(2);
            count += 1;
        }
    }
    Ok((se / count.max(1) as f64).sqrt())
}

fn length_tag(length: f64) -> String {
    format!("{:03}", (length * 100.0).round() as i64)
}

fn write_dataset(out: Option<&Path>, sub: &str, ds: &TrajectoryDataset, stem: &str) -> Result<()> {
    if let Some(dir) = out {
        ds.write(&dir.join(sub), stem)?;
    }
    Ok(())
}

fn write_doc<T: Serialize>(out: Option<&Path>, rel: &str, kind: &str, content: &T) -> Result<()> {
    if let Some(dir) = out {
        write_json(&dir.join(rel), &Document::new(kind, content))?;
    }
    Ok(())
}

/// Trajectory dump of an oracle rollout: time, joints, cup, ball, in-cup flag.
pub fn rollout_dump(rollout: &OracleRollout) -> TrajectoryDataset {
    use crate::dataset::{joint_columns, vector_columns, RecordKind};
    let n = rollout.q.first().map_or(0, Vec::len);
    let mut columns = vec!["t".to_string()];
    columns.extend(joint_columns("q", n));
    columns.extend(vector_columns("xc"));
    columns.extend(vector_columns("xb"));
    columns.push("in_cup".into());
    let mut ds = TrajectoryDataset::new(RecordKind::Rollout, 1.0 / rollout.dt, columns);
    for k in 0..rollout.ball.len() {
        let mut row = vec![k as f64 * rollout.dt];
        row.extend(&rollout.q[k]);
        row.extend(rollout.cups[k].position.to_array());
        row.extend(rollout.ball[k].position.to_array());
        row.push(if rollout.in_cup[k] { 1.0 } else { 0.0 });
        ds.rows.push(row);
    }
    ds
}

/// Train one policy per RL seed inside `model`. No oracle is involved.
pub fn train_policies(
    cfg: &ExperimentConfig,
    task: &Task,
    model: &LearnedModel,
    exec: Execution,
) -> Result<Vec<TrainResult>> {
    let dim = task.generator.weight_dim();
    let policy0 = PolicyDistribution::isotropic(vec![0.0; dim], cfg.initial_variance, 1e-6);
    (0..cfg.rl_seeds)
        .map(|k| {
            let train_cfg = TrainConfig {
                seed: stream_seed(cfg.seed, STREAM_RL) ^ k as u64,
                ..cfg.train
            };
            Ok(train_offline(
                |w| model.episode(&task.episode, &task.generator, &task.reward, w),
                &policy0,
                &train_cfg,
                exec,
            )?)
        })
        .collect()
}

/// Expected reward inside `model`; a diverging model rollout scores the
/// training floor.
fn expected_or_floor(
    cfg: &ExperimentConfig,
    task: &Task,
    model: &LearnedModel,
    w: &[f64],
) -> Result<f64> {
    match task.expected_reward(model, w) {
        Err(HarnessError::Core(diffnea_core::Error::Divergence { .. })) => {
            Ok(cfg.train.floor_reward)
        }
        r => r,
    }
}

/// Execute every trained policy mean on `oracle`, then repeat the best
/// successful one under torque noise.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policies(
    cfg: &ExperimentConfig,
    task: &Task,
    method: Method,
    length: f64,
    oracle: &Oracle,
    identified: &Identified,
    trained: &[TrainResult],
    out: Option<&Path>,
) -> Result<MethodResult> {
    if trained.is_empty() {
        return Err(HarnessError::Validation("no policies to evaluate".into()));
    }
    let mut seeds = Vec::with_capacity(trained.len());
    for (k, result) in trained.iter().enumerate() {
        let expected_reward = expected_or_floor(cfg, task, &identified.model, &result.policy.mean)?;
        let (rollout, actual) = task.execute(
            oracle,
            &identified.controller,
            &result.policy.mean,
            &Default::default(),
        )?;
        let tag = format!(
            "{}_{}_seed{k}",
            method.label().to_lowercase(),
            length_tag(length)
        );
        write_doc(out, &format!("policies/{tag}.json"), "policy", result)?;
        if let Some(rollout) = &rollout {
            write_dataset(out, "rollouts", &rollout_dump(rollout), &tag)?;
        }
        seeds.push(SeedResult {
            seed: k as u64,
            expected_reward,
            actual,
            final_mean_reward: result.curve.last().map_or(f64::NAN, |c| c.mean_reward),
        });
    }
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.sort_by(|&a, &b| {
        seeds[b]
            .actual
            .reward
            .total_cmp(&seeds[a].actual.reward)
            .then(a.cmp(&b))
    });
    let top: Vec<f64> = order
        .iter()
        .take(cfg.top_seeds)
        .map(|&i| seeds[i].actual.reward)
        .collect();
    let (avg_reward, std_reward) = mean_std(&top);
    let transferability =
        seeds.iter().filter(|s| s.actual.success).count() as f64 / seeds.len() as f64;
    // repeat the best successful policy; a failed one would trivially score 0
    let best = order
        .iter()
        .copied()
        .find(|&i| seeds[i].actual.success)
        .unwrap_or(order[0]);
    let repeatability = task.repeatability(
        oracle,
        &identified.controller,
        &trained[best].policy.mean,
        cfg.repeatability_runs,
        cfg.execution_noise,
        stream_seed(cfg.seed, STREAM_REPEAT),
    )?;
    Ok(MethodResult {
        method,
        length,
        oracle_accesses_during_training: 0,
        seeds,
        avg_reward,
        std_reward,
        transferability,
        repeatability,
        best_seed: best as u64,
    })
}

/// Run the configured pipeline. Artifacts go below `out` when given and
/// enabled; the returned report is a pure function of the configuration.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    exec: Execution,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out: Option<PathBuf> = if cfg.artifacts {
        out.map(Path::to_path_buf)
    } else {
        None
    };
    let out = out.as_deref();
    let task = Task::new(cfg.episode, cfg.reward, cfg.success)?;
    let truth = arm::true_arm();
    let nominal_arm = arm::nominal_arm(stream_seed(cfg.seed, STREAM_NOMINAL));
    let identify_needed = cfg.methods.contains(&Method::Diffnea);
    let mut failures = Vec::new();

    let mut arm_fit = None;
    let mut identified_arm = None;
    if identify_needed {
        match identify_arm_stage(cfg, &truth, &nominal_arm, out, exec) {
            Ok((tree, summary)) => {
                identified_arm = Some(tree);
                arm_fit = Some(summary);
            }
            Err(e) => failures.push(StageFailure::new("arm_identification", None, None, &e)),
        }
    }

    let mut lengths = Vec::with_capacity(cfg.lengths.len());
    let mut table = Vec::new();
    for &length in &cfg.lengths {
        let oracle = Oracle::new(
            truth.clone(),
            arm::cup_offset(arm::CUP_TRANSLATION),
            OracleConfig {
                string_length: length,
                ..cfg.oracle
            },
        )?;
        let mut report = LengthReport {
            length,
            ball_excitation: None,
            string_fit: None,
            methods: Vec::new(),
        };
        for &method in &cfg.methods {
            let identified = match method {
                Method::Diffnea => {
                    // skipped: the arm stage already recorded its failure
                    let Some(controller) = &identified_arm else {
                        continue;
                    };
                    match identify_string_stage(cfg, &oracle, controller, out, exec) {
                        Ok((identified, ball, fit)) => {
                            report.ball_excitation = Some(ball);
                            report.string_fit = Some(fit);
                            identified
                        }
                        Err(e) => {
                            failures.push(StageFailure::new(
                                "string_identification",
                                Some(length),
                                None,
                                &e,
                            ));
                            continue;
                        }
                    }
                }
                Method::Nominal => Identified {
                    model: LearnedModel::new(nominal_arm.clone(), arm::nominal_string(length)?)?,
                    controller: nominal_arm.clone(),
                },
            };
            let before = oracle.accesses();
            let trained = match train_policies(cfg, &task, &identified.model, exec) {
                Ok(t) => t,
                Err(e) => {
                    failures.push(StageFailure::new(
                        "training",
                        Some(length),
                        Some(method),
                        &e,
                    ));
                    continue;
                }
            };
            let accesses = oracle.accesses() - before;
            let mut result = match evaluate_policies(
                cfg,
                &task,
                method,
                length,
                &oracle,
                &identified,
                &trained,
                out,
            ) {
                Ok(r) => r,
                Err(e) => {
                    failures.push(StageFailure::new(
                        "evaluation",
                        Some(length),
                        Some(method),
                        &e,
                    ));
                    continue;
                }
            };
            result.oracle_accesses_during_training = accesses;
            table.push(TableRow {
                method: method.label().to_string(),
                length,
                avg_reward: result.avg_reward,
                std_reward: result.std_reward,
                transferability: result.transferability,
                repeatability: result.repeatability,
            });
            report.methods.push(result);
        }
        lengths.push(report);
    }
    let data = if identify_needed {
        DataBudget {
            arm_seconds: cfg.arm_excitation.duration,
            ball_seconds: cfg.ball_excitation.duration * cfg.ball_excitation.repeats as f64,
            total_seconds: cfg.data_seconds(),
            limit_seconds: cfg.max_data_seconds,
        }
    } else {
        DataBudget {
            arm_seconds: 0.0,
            ball_seconds: 0.0,
            total_seconds: 0.0,
            limit_seconds: cfg.max_data_seconds,
        }
    };
    let report = ExperimentReport {
        seed: cfg.seed,
        data,
        arm_fit,
        lengths,
        table,
        failures,
    };
    if let Some(dir) = out {
        write_json(&dir.join("config.json"), cfg)?;
        write_json(
            &dir.join("report.json"),
            &Document::new("experiment_report", &report),
        )?;
        std::fs::write(dir.join("table.md"), report.table_text())
            .map_err(|e| HarnessError::io(dir, e))?;
    }
    Ok(report)
}

fn identify_arm_stage(
    cfg: &ExperimentConfig,
    truth: &KinematicTree,
    nominal: &KinematicTree,
    out: Option<&Path>,
    exec: Execution,
) -> Result<(KinematicTree, ArmFitSummary)> {
    let arm_cfg = ArmExcitationConfig {
        seed: stream_seed(cfg.seed, STREAM_ARM_DATA),
        ..cfg.arm_excitation.clone()
    };
    let train = generate_arm_excitation(truth, &arm_cfg)?;
    let held_cfg = ArmExcitationConfig {
        seed: stream_seed(cfg.seed, STREAM_HELDOUT),
        ..cfg.arm_excitation.clone()
    };
    let held = generate_arm_excitation(truth, &held_cfg)?;
    write_dataset(out, "data", &train, "arm_excitation")?;
    write_dataset(out, "data", &held, "arm_heldout")?;
    let (tree, fit) = identify_arm(
        nominal,
        &train.arm_samples(None)?,
        &cfg.arm_identification,
        exec,
    )?;
    write_doc(
        out,
        "fits/arm.json",
        "arm_fit",
        &ArmFitDocument {
            tree: tree.clone(),
            fit: fit.clone(),
        },
    )?;
    let summary = ArmFitSummary {
        initial_loss: fit.initial_loss,
        loss: fit.loss,
        iterations: fit.iterations,
        converged: fit.converged,
        heldout_rmse: torque_rmse(&tree, &held.arm_samples(None)?)?,
        noise_floor: cfg.arm_excitation.torque_noise,
    };
    Ok((tree, summary))
}

/// Record ball data with the identified arm as feedforward model and fit the
/// string on it.
fn identify_string_stage(
    cfg: &ExperimentConfig,
    oracle: &Oracle,
    controller: &KinematicTree,
    out: Option<&Path>,
    exec: Execution,
) -> Result<(Identified, BallExcitationReport, StringFitSummary)> {
    let length = oracle.config.string_length;
    let ball_cfg = BallExcitationConfig {
        seed: stream_seed(cfg.seed, STREAM_BALL_DATA),
        ..cfg.ball_excitation.clone()
    };
    let (ds, ball_report) = generate_ball_excitation(oracle, controller, &ball_cfg)?;
    write_dataset(
        out,
        "data",
        &ds,
        &format!("ball_excitation_{}", length_tag(length)),
    )?;
    let nominal = arm::nominal_string(length)?;
    let samples = ds.ball_samples(controller)?;
    let (string, fit) =
        identify_string_model(&nominal, &samples, &cfg.string_identification, exec)?;
    write_doc(
        out,
        &format!("fits/string_{}.json", length_tag(length)),
        "string_fit",
        &StringFitDocument {
            string,
            fit: fit.clone(),
        },
    )?;
    let summary = StringFitSummary {
        initial_length: length_quantile(
            &nominal,
            &samples,
            cfg.string_identification.initial_quantile,
        )?,
        length: string.length(),
        relative_error: string.length() / length - 1.0,
        drag: string.drag(),
        cup_translation: string.cup_offset.translation,
        loss: fit.loss,
        iterations: fit.iterations,
    };
    let identified = Identified {
        model: LearnedModel::new(controller.clone(), string)?,
        controller: controller.clone(),
    };
    Ok((identified, ball_report, summary))
}

/// A pipeline stage that failed; its downstream stages were skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub length: Option<f64>,
    pub method: Option<Method>,
    pub message: String,
    pub exit_code: i32,
}

impl StageFailure {
    fn new(stage: &str, length: Option<f64>, method: Option<Method>, e: &HarnessError) -> Self {
        Self {
            stage: stage.into(),
            length,
            method,
            message: e.to_string(),
            exit_code: e.exit_code(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmFitDocument {
    pub tree: KinematicTree,
    pub fit: FitReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StringFitDocument {
    pub string: StringModelParams,
    pub fit: FitReport,
}
