use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use diffnea_core::dynamics::KinematicTree;
use diffnea_core::policy::TrainResult;
use diffnea_core::string::StringModelParams;
use diffnea_core::Execution;
use diffnea_harness::arm;
use diffnea_harness::dataset::TrajectoryDataset;
use diffnea_harness::error::{HarnessError, Result};
use diffnea_harness::evaluate::Task;
use diffnea_harness::excitation::{
    base_parameter_condition, generate_arm_excitation, generate_ball_excitation,
    ArmExcitationConfig, BallExcitationConfig,
};
use diffnea_harness::experiment::{
    evaluate_policies, rollout_dump, run_experiment, stream_seed, train_policies, ArmFitDocument,
    ExperimentConfig, Identified, Method, StringFitDocument, STREAM_ARM_DATA, STREAM_BALL_DATA,
    STREAM_HELDOUT, STREAM_NOMINAL,
};
use diffnea_harness::gradcheck::run_gradcheck;
use diffnea_harness::identify::{identify_arm, identify_string_model};
use diffnea_harness::model::LearnedModel;
use diffnea_harness::oracle::{Oracle, OracleConfig};
use diffnea_harness::report::{read_document, read_json, to_json, write_json, Document};

#[derive(Parser)]
#[command(
    name = "diffnea",
    version,
    about = "Identify, train and evaluate ball-in-a-cup policies offline"
)]
struct Cli {
    /// JSON experiment configuration; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run batch evaluations on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    /// Multi-sine arm excitation plus a held-out recording.
    Arm,
    /// Ball swinging under a cosine schedule on the chain oracle.
    Ball,
}

#[derive(Subcommand)]
enum Command {
    /// Record an identification dataset.
    GenData {
        #[arg(long, value_enum, default_value = "arm")]
        kind: DataKind,
        /// String length of the oracle (ball data).
        #[arg(long, default_value_t = 0.40)]
        length: f64,
        /// Arm fit used as feedforward model (ball data); defaults to the CAD arm.
        #[arg(long)]
        arm: Option<PathBuf>,
    },
    /// Fit the arm to an excitation dataset.
    IdentifyArm {
        /// Dataset manifest.
        #[arg(long)]
        data: PathBuf,
        /// Held-out dataset manifest for the prediction RMSE.
        #[arg(long)]
        heldout: Option<PathBuf>,
    },
    /// Fit cup offset and string length to a ball dataset.
    IdentifyString {
        #[arg(long)]
        data: PathBuf,
        /// Arm fit whose kinematics place the cup; defaults to the CAD arm.
        #[arg(long)]
        arm: Option<PathBuf>,
        /// Nominal string length for the starting model.
        #[arg(long, default_value_t = 0.40)]
        length: f64,
    },
    /// Train policies inside a learned model.
    Train {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Execute trained policies on the oracle.
    Evaluate {
        /// Policy documents written by `train`.
        #[arg(long, required = true, num_args = 1..)]
        policy: Vec<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Full pipeline: data, identification, training, evaluation, report.
    Experiment {
        /// Only run the nominal baseline.
        #[arg(long)]
        nominal_model: bool,
    },
    /// Compare loss gradients with finite differences on random models.
    Gradcheck,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Arm fit document.
    #[arg(long)]
    arm: Option<PathBuf>,
    /// String fit document.
    #[arg(long)]
    string: Option<PathBuf>,
    /// True string length of the task.
    #[arg(long, default_value_t = 0.40)]
    length: f64,
    /// Use the CAD arm and the analytic string with the true length instead of fits.
    #[arg(long)]
    nominal_model: bool,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &cli.config {
        Some(path) => read_json(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_arm(path: Option<&Path>, cfg: &ExperimentConfig) -> Result<KinematicTree> {
    match path {
        Some(p) => Ok(read_document::<ArmFitDocument>(p, "arm_fit")?.tree),
        None => Ok(arm::nominal_arm(stream_seed(cfg.seed, STREAM_NOMINAL))),
    }
}

fn load_model(args: &ModelArgs, cfg: &ExperimentConfig) -> Result<(Method, Identified)> {
    if args.nominal_model {
        let controller = load_arm(None, cfg)?;
        let model = LearnedModel::new(controller.clone(), arm::nominal_string(args.length)?)?;
        return Ok((Method::Nominal, Identified { controller, model }));
    }
    let (Some(arm_path), Some(string_path)) = (&args.arm, &args.string) else {
        return Err(HarnessError::Validation(
            "need --arm and --string fits, or --nominal-model".into(),
        ));
    };
    let controller = load_arm(Some(arm_path), cfg)?;
    let string: StringModelParams =
        read_document::<StringFitDocument>(string_path, "string_fit")?.string;
    let model = LearnedModel::new(controller.clone(), string)?;
    Ok((Method::Diffnea, Identified { controller, model }))
}

fn oracle(cfg: &ExperimentConfig, length: f64) -> Result<Oracle> {
    Oracle::new(
        arm::true_arm(),
        arm::cup_offset(arm::CUP_TRANSLATION),
        OracleConfig {
            string_length: length,
            ..cfg.oracle
        },
    )
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenData {
            kind: DataKind::Arm,
            ..
        } => {
            let truth = arm::true_arm();
            let train_cfg = ArmExcitationConfig {
                seed: stream_seed(cfg.seed, STREAM_ARM_DATA),
                ..cfg.arm_excitation.clone()
            };
            let held_cfg = ArmExcitationConfig {
                seed: stream_seed(cfg.seed, STREAM_HELDOUT),
                ..cfg.arm_excitation.clone()
            };
            let train = generate_arm_excitation(&truth, &train_cfg)?;
            let held = generate_arm_excitation(&truth, &held_cfg)?;
            let manifest = train.write(out, "arm_excitation")?;
            held.write(out, "arm_heldout")?;
            let report = base_parameter_condition(&truth, &train.arm_samples(None)?)?;
            write_json(
                &out.join("arm_base_parameters.json"),
                &Document::new("base_parameters", &report),
            )?;
            eprintln!("wrote {} rows to {}", train.len(), manifest.display());
            print!("{}", to_json(&report));
        }
        Command::GenData {
            kind: DataKind::Ball,
            length,
            arm: arm_path,
        } => {
            let controller = load_arm(arm_path.as_deref(), &cfg)?;
            let oracle = oracle(&cfg, *length)?;
            let ball_cfg = BallExcitationConfig {
                seed: stream_seed(cfg.seed, STREAM_BALL_DATA),
                ..cfg.ball_excitation.clone()
            };
            let (ds, report) = generate_ball_excitation(&oracle, &controller, &ball_cfg)?;
            let manifest = ds.write(out, "ball_excitation")?;
            write_json(
                &out.join("ball_excitation_report.json"),
                &Document::new("ball_excitation_report", &report),
            )?;
            eprintln!("wrote {} rows to {}", ds.len(), manifest.display());
            print!("{}", to_json(&report));
        }
        Command::IdentifyArm { data, heldout } => {
            let train = TrajectoryDataset::read(data)?;
            let nominal = load_arm(None, &cfg)?;
            let (tree, fit) = identify_arm(
                &nominal,
                &train.arm_samples(None)?,
                &cfg.arm_identification,
                exec,
            )?;
            let mut summary = serde_json::json!({ "initial_loss": fit.initial_loss, "loss": fit.loss, "iterations": fit.iterations });
            if let Some(h) = heldout {
                let held = TrajectoryDataset::read(h)?;
                summary["heldout_rmse"] =
                    diffnea_harness::experiment::torque_rmse(&tree, &held.arm_samples(None)?)?
                        .into();
            }
            write_json(
                &out.join("arm_fit.json"),
                &Document::new("arm_fit", &ArmFitDocument { tree, fit }),
            )?;
            print!("{}", to_json(&summary));
        }
        Command::IdentifyString {
            data,
            arm: arm_path,
            length,
        } => {
            let ds = TrajectoryDataset::read(data)?;
            let tree = load_arm(arm_path.as_deref(), &cfg)?;
            let nominal = arm::nominal_string(*length)?;
            let (string, fit) = identify_string_model(
                &nominal,
                &ds.ball_samples(&tree)?,
                &cfg.string_identification,
                exec,
            )?;
            let summary = serde_json::json!({
                "length": string.length(),
                "cup_translation": string.cup_offset.translation,
                "loss": fit.loss,
                "iterations": fit.iterations,
            });
            write_json(
                &out.join("string_fit.json"),
                &Document::new("string_fit", &StringFitDocument { string, fit }),
            )?;
            print!("{}", to_json(&summary));
        }
        Command::Train { model } => {
            let (method, identified) = load_model(model, &cfg)?;
            let task = Task::new(cfg.episode, cfg.reward, cfg.success)?;
            let trained = train_policies(&cfg, &task, &identified.model, exec)?;
            for (k, result) in trained.iter().enumerate() {
                let path = out.join(format!("{}_seed{k}.json", method.label().to_lowercase()));
                write_json(&path, &Document::new("policy", result))?;
                eprintln!(
                    "seed {k}: final mean reward {:.4}",
                    result.curve.last().map_or(f64::NAN, |c| c.mean_reward)
                );
            }
        }
        Command::Evaluate { policy, model } => {
            let (method, identified) = load_model(model, &cfg)?;
            let task = Task::new(cfg.episode, cfg.reward, cfg.success)?;
            let trained = policy
                .iter()
                .map(|p| read_document::<TrainResult>(p, "policy"))
                .collect::<Result<Vec<_>>>()?;
            let oracle = oracle(&cfg, model.length)?;
            let result = evaluate_policies(
                &cfg,
                &task,
                method,
                model.length,
                &oracle,
                &identified,
                &trained,
                None,
            )?;
            if let Some(best) = task
                .execute(
                    &oracle,
                    &identified.controller,
                    &trained[result.best_seed as usize].policy.mean,
                    &Default::default(),
                )?
                .0
            {
                rollout_dump(&best).write(out, "best_rollout")?;
            }
            write_json(
                &out.join("evaluation.json"),
                &Document::new("evaluation", &result),
            )?;
            print!("{}", to_json(&result));
        }
        Command::Experiment { nominal_model } => {
            let mut cfg = cfg;
            if *nominal_model {
                cfg.methods = vec![Method::Nominal];
            }
            let report = run_experiment(&cfg, Some(out), exec)?;
            print!("{}", report.table_text());
            if let Some(f) = report.failures.first() {
                for f in &report.failures {
                    eprintln!("stage {} failed: {}", f.stage, f.message);
                }
                return Err(if f.exit_code == 3 {
                    HarnessError::Numerical(format!("{} stage(s) failed", report.failures.len()))
                } else {
                    HarnessError::Validation(format!("{} stage(s) failed", report.failures.len()))
                });
            }
        }
        Command::Gradcheck => {
            let report = run_gradcheck(&cfg.gradcheck, cfg.seed, exec)?;
            write_json(
                &out.join("gradcheck.json"),
                &Document::new("gradcheck", &report),
            )?;
            print!("{}", to_json(&report));
            if !report.passed {
                return Err(HarnessError::Numerical(
                    "loss gradients disagree with finite differences".into(),
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
