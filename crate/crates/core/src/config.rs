//! Experiment configuration: built-in profiles, JSON file overlays and dotted
//! `key=value` overrides. Every key of an overlay must already exist in the
//! profile, so typos are reported by name instead of being ignored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{Env, Scenario, TaskConfig};
use crate::error::{Error, Result};
use crate::eval::{AccuracyConfig, EVAL_STEPS};
use crate::oracle::OracleSettings;
use crate::policy::{MlpHyper, MlpPolicy, Policy, TransformerHyper, TransformerPolicy};
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk or paper)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Transformer,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub transformer: TransformerHyper,
    pub mlp: MlpHyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Closed-loop horizons.
    pub horizons: Vec<usize>,
    pub steps: usize,
    pub scenarios: Vec<Scenario>,
    pub accuracy: AccuracyConfig,
    /// Horizon of the full-sequence accuracy sweep (`null` skips it).
    pub accuracy_horizon: Option<usize>,
    /// Horizons of the first-element accuracy sweep (empty skips it).
    pub first_element_horizons: Vec<usize>,
    /// Also run the oracle as a receding-horizon controller.
    pub include_mpc: bool,
    pub mpc: OracleSettings,
    pub latency_horizons: Vec<usize>,
    pub latency_repetitions: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizons: vec![5, 10, 20],
            steps: EVAL_STEPS,
            scenarios: vec![Scenario::Sine, Scenario::DoubleLaneChange],
            accuracy: AccuracyConfig::default(),
            accuracy_horizon: Some(20),
            first_element_horizons: (1..=20).collect(),
            include_mpc: false,
            mpc: OracleSettings {
                restarts: 0,
                ..Default::default()
            },
            latency_horizons: (1..=20).collect(),
            latency_repetitions: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckConfig {
    pub h: f64,
    pub tol: f64,
    /// Seeds of the policy-plus-rollout check.
    pub seeds: usize,
    pub horizon: usize,
    pub batch: usize,
    /// Relative-error denominator floor for the composed check.
    pub floor: f64,
    pub max_coords: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-6,
            tol: 1e-4,
            seeds: 10,
            horizon: 6,
            batch: 2,
            floor: 1e-4,
            max_coords: 6,
        }
    }
}

/// Everything a CLI run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub task: TaskConfig,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub oracle: OracleSettings,
    pub eval: EvalConfig,
    pub gradcheck: GradCheckConfig,
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let desk = Self {
            profile,
            seed: 0,
            task: TaskConfig::tracking(),
            policy: PolicyConfig {
                kind: PolicyKind::Transformer,
                transformer: TransformerHyper::desk(),
                mlp: MlpHyper::default(),
            },
            train: TrainConfig::default(),
            oracle: OracleSettings::default(),
            eval: EvalConfig::default(),
            gradcheck: GradCheckConfig::default(),
        };
        match profile {
            Profile::Desk => desk,
            Profile::Paper => Self {
                policy: PolicyConfig {
                    transformer: TransformerHyper::paper(),
                    ..desk.policy
                },
                train: TrainConfig {
                    iterations: 20_000,
                    ..desk.train
                },
                ..desk
            },
        }
    }

    /// Profile, then an optional JSON file, then `key=value` overrides.
    pub fn resolve(profile: Profile, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(Self::profile(profile))?;
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let overlay: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut v, overlay, "")?;
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_path(&mut v, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.policy.transformer.validate()?;
        if self.policy.transformer.n_max < self.train.n_max {
            return Err(Error::Config("policy.transformer.n_max must cover train.n_max".into()));
        }
        if self.task.scenarios.is_empty() {
            return Err(Error::Config("task.scenarios is empty".into()));
        }
        if self.eval.accuracy_horizon == Some(0) || self.eval.horizons.contains(&0) || self.eval.first_element_horizons.contains(&0) || self.eval.latency_horizons.contains(&0) {
            return Err(Error::EmptyHorizon);
        }
        Ok(())
    }

    pub fn env(&self) -> Result<Env> {
        Env::new(self.task.clone())
    }

    /// Fresh policy of the configured kind, initialized from `seed`.
    pub fn build_policy(&self, env: &Env, seed: u64) -> Result<Box<dyn Policy<f64>>> {
        Ok(match self.policy.kind {
            PolicyKind::Transformer => Box::new(TransformerPolicy::new(
                self.policy.transformer.clone(),
                env.features(),
                env.bounds().clone(),
                seed,
            )?),
            PolicyKind::Mlp => Box::new(MlpPolicy::new(self.policy.mlp.clone(), env.features(), env.bounds().clone(), seed)?),
        })
    }

    /// Training settings with the top-level seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

/// Bare words that are not valid JSON are taken as strings.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn merge(base: &mut Value, overlay: Value, prefix: &str) -> Result<()> {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let path = join(prefix, &k);
                let slot = b.get_mut(&k).ok_or_else(|| Error::UnknownKey(path.clone()))?;
                merge(slot, v, &path)?;
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let mut seen = String::new();
    for part in key.split('.') {
        seen = join(&seen, part);
        node = match node {
            Value::Object(m) => m.get_mut(part).ok_or_else(|| Error::UnknownKey(seen.clone()))?,
            _ => return Err(Error::UnknownKey(seen)),
        };
    }
    *node = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn overrides_reach_nested_fields() {
        let sets = ["train.iterations=7".to_string(), "eval.horizons=[7]".into(), "policy.kind=mlp".into(), "seed=3".into()];
        let c = ExperimentConfig::resolve(Profile::Desk, None, &sets).unwrap();
        assert_eq!(c.train.iterations, 7);
        assert_eq!(c.eval.horizons, vec![7]);
        assert_eq!(c.policy.kind, PolicyKind::Mlp);
        assert_eq!(c.train_config().seed, 3);
        let c = ExperimentConfig::resolve(Profile::Desk, None, &["eval.accuracy_horizon=null".into()]).unwrap();
        assert_eq!(c.eval.accuracy_horizon, None);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::resolve(Profile::Desk, None, &["train.iteratons=5".into()]).unwrap_err();
        assert!(matches!(err, Error::UnknownKey(ref k) if k == "train.iteratons"), "{err}");
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, r#"{{"task": {{"cost": {{"tracking": {{"pz": 1.0}}}}}}}}"#).unwrap();
        let err = ExperimentConfig::resolve(Profile::Desk, Some(f.path()), &[]).unwrap_err();
        assert!(matches!(err, Error::UnknownKey(ref k) if k == "task.cost.tracking.pz"), "{err}");
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(matches!(
            ExperimentConfig::resolve(Profile::Desk, None, &["train.iterations=lots".into()]),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::resolve(Profile::Desk, None, &["train.n_max=0".into()]).is_err());
        assert!(ExperimentConfig::resolve(Profile::Desk, None, &["noequals".into()]).is_err());
    }

    #[test]
    fn profiles_differ_in_scale() {
        let desk = ExperimentConfig::profile(Profile::Desk);
        let paper = ExperimentConfig::profile(Profile::Paper);
        assert_eq!(desk.policy.transformer.d_embed, 32);
        assert_eq!(desk.train.iterations, 2000);
        assert_eq!(paper.policy.transformer.d_embed, 256);
        assert_eq!(paper.train.iterations, 20_000);
        let round: ExperimentConfig = serde_json::from_value(serde_json::to_value(&paper).unwrap()).unwrap();
        assert_eq!(round, paper);
    }

    #[test]
    fn file_overlay_then_override() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, r#"{{"task": {{"plant": "robot", "scenarios": ["obstacle"]}}, "train": {{"iterations": 10}}}}"#).unwrap();
        let c = ExperimentConfig::resolve(Profile::Desk, Some(f.path()), &["train.iterations=11".into()]).unwrap();
        assert_eq!(c.task.scenarios, vec![Scenario::Obstacle]);
        assert_eq!(c.train.iterations, 11);
    }
}
