use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::{json, Value};

use explicit_mpc::checks::{gradcheck_suite, oracle_validation};
use explicit_mpc::config::{ExperimentConfig, Profile};
use explicit_mpc::env::{Env, Scenario};
use explicit_mpc::eval::{
    accuracy_sweep, checkpoint_id, closed_loop_eval, config_hash, emit_report, latency_bench, obstacle_eval, AccuracyMode,
    EvalReport, PolicyController, Provenance,
};
use explicit_mpc::policy::{load_policy, Policy, PolicyManifest};
use explicit_mpc::trainer::{train, train_concurrent, write_log, Trainer};
use explicit_mpc::Error;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("EMPC_GIT_REV"));

#[derive(Parser)]
#[command(name = "empc", version = VERSION, about = "Transformer explicit MPC: train, evaluate, benchmark and self-check")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON file merged onto the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (default: runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted override, e.g. `train.iterations=500`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes policy.ckpt and train_log.csv.
    Train {
        /// Continue from a snapshot directory written during an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Sample and learn on separate threads (not bit-reproducible).
        #[arg(long)]
        concurrent: bool,
    },
    /// Accuracy against the oracle, closed-loop tracking and obstacle clearance.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Forward-pass latency per horizon.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Validate the horizon optimizer against the Riccati solution.
    Oracle {
        #[arg(long, default_value_t = 10)]
        horizon: usize,
    },
    /// Finite-difference check of every tape op, the policy and the rollout.
    Gradcheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Bench { .. } => "bench",
            Command::Oracle { .. } => "oracle",
            Command::Gradcheck => "gradcheck",
        }
    }
}

enum Failure {
    Error(Error),
    Acceptance(String),
    Divergence(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence(m) => Failure::Divergence(m),
            e => Failure::Error(e),
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Error(Error::Config(_) | Error::UnknownKey(_) | Error::EmptyHorizon | Error::Checkpoint(_)) => 2,
            Failure::Error(_) => 1,
            Failure::Acceptance(_) => 3,
            Failure::Divergence(_) => 4,
        }
    }

    fn report(&self, command: &str) -> Value {
        let (kind, message, key) = match self {
            Failure::Error(Error::UnknownKey(k)) => ("unknown_key", format!("unknown configuration key `{k}`"), Some(k.clone())),
            Failure::Error(e) if self.code() == 2 => ("config", e.to_string(), None),
            Failure::Error(e) => ("runtime", e.to_string(), None),
            Failure::Acceptance(m) => ("acceptance", m.clone(), None),
            Failure::Divergence(m) => ("divergence", m.clone(), None),
        };
        json!({
            "status": "error",
            "command": command,
            "exit_code": self.code(),
            "kind": kind,
            "message": message,
            "key": key,
            "version": VERSION,
        })
    }
}

type Outcome = std::result::Result<Value, Failure>;

struct Run {
    config: ExperimentConfig,
    out: PathBuf,
}

impl Run {
    fn write_json(&self, name: &str, v: &Value) -> Result<(), Error> {
        fs::write(self.out.join(name), serde_json::to_vec_pretty(v)?)?;
        Ok(())
    }

    fn provenance(&self, checkpoint: Option<&Path>) -> Result<Provenance, Error> {
        Ok(Provenance {
            config_hash: config_hash(&self.config)?,
            seed: self.config.seed,
            checkpoint_id: checkpoint.map(checkpoint_id).transpose()?,
            version: VERSION.into(),
        })
    }

    fn checkpoint(&self, given: Option<PathBuf>) -> Result<PathBuf, Error> {
        let path = given.unwrap_or_else(|| self.out.join("policy.ckpt"));
        if !path.is_file() {
            return Err(Error::Checkpoint(format!("checkpoint not found: {}", path.display())));
        }
        Ok(path)
    }

    /// Loads a checkpoint and checks it was trained for this task's plant.
    fn load(&self, path: &Path, env: &Env) -> Result<(Box<dyn Policy<f64>>, String), Error> {
        let (policy, _) = load_policy::<f64>(path)?;
        if policy.bounds() != env.bounds() || *policy.features() != env.features() {
            return Err(Error::Checkpoint(format!(
                "{} does not match the configured task (plant or input bounds differ)",
                path.display()
            )));
        }
        let label = match policy.manifest() {
            PolicyManifest::Transformer { .. } => "transformer",
            PolicyManifest::Mlp { .. } => "mlp",
        };
        Ok((policy, label.into()))
    }
}

fn setup(common: &Common, command: &str) -> Result<Run, Error> {
    let profile = match common.profile {
        ProfileArg::Desk => Profile::Desk,
        ProfileArg::Paper => Profile::Paper,
    };
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = ExperimentConfig::resolve(profile, common.config.as_deref(), &overrides)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command));
    fs::create_dir_all(&out)?;
    let run = Run { config, out };
    run.write_json("effective_config.json", &serde_json::to_value(&run.config)?)?;
    run.write_json(
        "run.json",
        &json!({
            "command": command,
            "seed": run.config.seed,
            "profile": run.config.profile,
            "version": VERSION,
            "config_hash": config_hash(&run.config)?,
            "config_file": common.config,
            "overrides": common.overrides,
        }),
    )?;
    Ok(run)
}

fn cmd_train(run: &Run, resume: Option<PathBuf>, concurrent: bool) -> Outcome {
    let env = run.config.env()?;
    let cfg = run.config.train_config();
    let (policy, log) = if let Some(dir) = resume {
        let mut t = Trainer::resume(&dir, env)?;
        t.config.iterations = cfg.iterations;
        let log = t.run(Some(&run.out))?;
        (t.policy, log)
    } else if concurrent {
        let sampler_env = run.config.env()?;
        let policy = run.config.build_policy(&env, cfg.seed)?;
        let (p, log) = train_concurrent(cfg.clone(), env, policy, || run.config.build_policy(&sampler_env, cfg.seed))?;
        write_log(&run.out.join("train_log.csv"), &log)?;
        (p, log)
    } else {
        let policy = run.config.build_policy(&env, cfg.seed)?;
        train(cfg.clone(), env, policy, Some(&run.out))?
    };
    let ckpt = run.out.join("policy.ckpt");
    let mut extra = serde_json::Map::new();
    extra.insert("iteration".into(), json!(log.last().map_or(0, |r| r.iteration)));
    explicit_mpc::policy::save_policy(&ckpt, policy.as_ref(), &extra)?;
    let first = log.first().map(|r| r.loss);
    let last = log.last().map(|r| r.loss);
    if last.is_some_and(|l| !l.is_finite()) {
        return Err(Failure::Divergence(format!("final training loss is {}", last.unwrap_or(f64::NAN))));
    }
    Ok(json!({
        "iterations": log.len(),
        "first_loss": first,
        "final_loss": last,
        "checkpoint": ckpt,
        "checkpoint_id": checkpoint_id(&ckpt)?,
    }))
}

fn cmd_eval(run: &Run, checkpoint: Option<PathBuf>) -> Outcome {
    let env = run.config.env()?;
    let path = run.checkpoint(checkpoint)?;
    let (policy, label) = run.load(&path, &env)?;
    let ev = &run.config.eval;
    let mut report = EvalReport::default();
    for &scenario in &ev.scenarios {
        if scenario == Scenario::Obstacle {
            for &n in &ev.horizons {
                info!("obstacle run at N={n}");
                let mut c = PolicyController::new(policy.as_ref(), label.clone());
                report.clearance.push(obstacle_eval(&mut c, &env, ev.steps, n)?);
            }
            continue;
        }
        let mut modes = Vec::new();
        if let Some(h) = ev.accuracy_horizon {
            modes.push(AccuracyMode::FullSequence { horizon: h });
        }
        if !ev.first_element_horizons.is_empty() {
            modes.push(AccuracyMode::FirstElement {
                horizons: ev.first_element_horizons.clone(),
            });
        }
        for mode in modes {
            info!("accuracy {} {:?}", scenario.name(), mode);
            report.accuracy.push(accuracy_sweep(policy.as_ref(), &env, scenario, mode, &run.config.oracle, &ev.accuracy)?);
        }
        for &n in &ev.horizons {
            info!("closed loop {} at N={n}", scenario.name());
            let mut c = PolicyController::new(policy.as_ref(), label.clone());
            report.closed_loop.push(closed_loop_eval(&mut c, &env, scenario, ev.steps, n)?);
            if ev.include_mpc {
                let mut m = explicit_mpc::eval::OracleController::new(&env, ev.mpc.clone());
                report.closed_loop.push(closed_loop_eval(&mut m, &env, scenario, ev.steps, n)?);
            }
        }
    }
    emit_report(&run.out, &report, &label, &run.provenance(Some(&path))?)?;
    let diverged: Vec<String> = report
        .closed_loop
        .iter()
        .filter(|c| c.diverged)
        .map(|c| format!("{} {} N={}", c.controller, c.scenario, c.horizon))
        .chain(report.clearance.iter().filter(|c| c.diverged).map(|c| format!("{} obstacle", c.controller)))
        .collect();
    if !diverged.is_empty() {
        return Err(Failure::Divergence(format!("closed-loop runs diverged: {}", diverged.join(", "))));
    }
    Ok(json!({
        "closed_loop": report.closed_loop.iter().map(|c| json!({
            "controller": c.controller, "scenario": c.scenario, "horizon": c.horizon,
            "delta_y": c.delta_y, "cost": c.cost,
        })).collect::<Vec<_>>(),
        "accuracy_sweeps": report.accuracy.len(),
        "clearance": report.clearance.iter().map(|c| json!({
            "controller": c.controller, "min_clearance": c.min_clearance, "collision": c.collision,
        })).collect::<Vec<_>>(),
    }))
}

fn cmd_bench(run: &Run, checkpoint: Option<PathBuf>) -> Outcome {
    let env = run.config.env()?;
    let path = run.checkpoint(checkpoint)?;
    let (policy, label) = run.load(&path, &env)?;
    let ev = &run.config.eval;
    let scenario = run.config.task.scenarios[0];
    let rows = latency_bench(policy.as_ref(), &env, scenario, &ev.latency_horizons, ev.latency_repetitions, &label)?;
    let report = EvalReport {
        latency: rows.clone(),
        ..Default::default()
    };
    emit_report(&run.out, &report, &label, &run.provenance(Some(&path))?)?;
    Ok(json!({ "latency": rows }))
}

fn cmd_oracle(run: &Run, horizon: usize) -> Outcome {
    let v = oracle_validation(&run.config.oracle, horizon)?;
    let value = serde_json::to_value(&v).map_err(Error::from)?;
    run.write_json("oracle_validation.json", &value)?;
    if !v.passed {
        return Err(Failure::Acceptance(format!(
            "oracle validation failed: control error {:e}, residuals {:e} / {:e}, feasible {}",
            v.max_control_error, v.residual_inactive, v.residual_active, v.feasible
        )));
    }
    Ok(value)
}

fn cmd_gradcheck(run: &Run) -> Outcome {
    let env = run.config.env()?;
    let s = gradcheck_suite(&env, &run.config.gradcheck, &|seed| run.config.build_policy(&env, seed))?;
    let value = serde_json::to_value(&s).map_err(Error::from)?;
    run.write_json("gradcheck.json", &value)?;
    if !s.passed {
        let failed: Vec<&str> = s.ops.iter().filter(|c| !c.report.passed).map(|c| c.op).collect();
        return Err(Failure::Acceptance(format!(
            "gradient check failed: max relative error {:e}; failing ops {failed:?}",
            s.max_rel_error
        )));
    }
    Ok(json!({
        "passed": true,
        "ops": s.ops.len(),
        "composite_seeds": s.composite.len(),
        "max_rel_error": s.max_rel_error,
    }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let command = cli.command.name();
    let result = setup(&cli.common, command).map_err(Failure::from).and_then(|run| {
        let outcome = match cli.command {
            Command::Train { resume, concurrent } => cmd_train(&run, resume, concurrent),
            Command::Eval { checkpoint } => cmd_eval(&run, checkpoint),
            Command::Bench { checkpoint } => cmd_bench(&run, checkpoint),
            Command::Oracle { horizon } => cmd_oracle(&run, horizon),
            Command::Gradcheck => cmd_gradcheck(&run),
        };
        outcome.map(|v| (run, v))
    });
    match result {
        Ok((run, value)) => {
            let summary = json!({ "status": "ok", "command": command, "out": run.out, "result": value });
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(f) => {
            let report = f.report(command);
            let text = serde_json::to_string_pretty(&report).unwrap_or_default();
            let out = cli.common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command));
            if out.is_dir() {
                let _ = fs::write(out.join("error.json"), &text);
            }
            eprintln!("{text}");
            ExitCode::from(f.code())
        }
    }
}
