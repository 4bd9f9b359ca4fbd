use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvState, Scenario};
use crate::error::{Error, Result};
use crate::models::{horizon_cost, ActionBounds, ControlSequence};
use crate::oracle::{solve, OracleProblem, OracleSettings, OracleSolution};
use crate::policy::Policy;

/// `|u_theta - u_star| / (u_max - u_min)`, element-wise; dimension `i % m`.
pub fn relative_accuracy(u_theta: &[f64], u_star: &[f64], bounds: &ActionBounds<f64>) -> Result<Vec<f64>> {
    if u_theta.len() != u_star.len() || u_theta.len() % bounds.dim() != 0 {
        return Err(Error::ShapeMismatch {
            op: "relative_accuracy",
            left: vec![u_theta.len()],
            right: vec![u_star.len()],
        });
    }
    let m = bounds.dim();
    for (lo, hi) in bounds.lo.iter().zip(&bounds.hi) {
        if !(hi > lo) {
            return Err(Error::DegenerateBounds { lo: *lo, hi: *hi });
        }
    }
    Ok(u_theta
        .iter()
        .zip(u_star)
        .enumerate()
        .map(|(i, (a, b))| (a - b).abs() / bounds.range(i % m))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AccuracyMode {
    /// Every element of the sequence at one horizon.
    FullSequence { horizon: usize },
    /// Only the first planned input, for each listed horizon.
    FirstElement { horizons: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccuracyConfig {
    pub n_states: usize,
    pub seed: u64,
    /// Abort when more than this fraction of oracle solves fail to converge.
    pub max_failure_rate: f64,
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        Self {
            n_states: 200,
            seed: 7,
            max_failure_rate: 0.25,
        }
    }
}

/// Mean and max accuracy of one `(horizon, index, dim)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub horizon: usize,
    pub index: usize,
    pub dim: usize,
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub scenario: Scenario,
    pub mode: AccuracyMode,
    pub rows: Vec<AccuracyRow>,
    pub sampled: usize,
    /// Non-converged oracle solves, per horizon in mode order.
    pub excluded: Vec<(usize, usize)>,
}

impl AccuracyReport {
    /// Mean over all rows of one dimension at one horizon and index.
    pub fn mean_at(&self, horizon: usize, index: usize, dim: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.horizon == horizon && r.index == index && r.dim == dim)
            .map(|r| r.mean)
    }

    /// Mean of the first-element rows at `horizon`, averaged over dimensions.
    pub fn first_element_mean(&self, horizon: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.horizon == horizon && r.index == 0)
            .map(|r| r.mean)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Initial states drawn from the reset distribution of one scenario.
pub fn sample_states(env: &Env, scenario: Scenario, n: usize, seed: u64) -> Result<Vec<EnvState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| env.reset_in(scenario, &mut rng)).collect()
}

/// One oracle solve for an environment state.
pub fn solve_state(env: &Env, s: &EnvState, horizon: usize, settings: &OracleSettings) -> Result<OracleSolution> {
    let refs = env.reference(s, horizon)?;
    let p = OracleProblem::new(env.dynamics(), env.cost(), s.x.clone(), refs, env.bounds().clone()).with_settings(settings.clone());
    solve(&p)
}

/// Horizon cost `V` of a control sequence from an environment state.
pub fn sequence_cost(env: &Env, s: &EnvState, u: &ControlSequence<f64>) -> Result<f64> {
    let refs = env.reference(s, u.horizon())?;
    horizon_cost(env.dynamics(), env.cost(), &s.x, &refs, u.data())
}

/// A paired policy/oracle solution at one state.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub state: EnvState,
    pub policy: ControlSequence<f64>,
    pub oracle: OracleSolution,
}

/// Policy output and oracle solution for each state at `horizon`.
pub fn compare(
    policy: &dyn Policy<f64>,
    env: &Env,
    states: &[EnvState],
    horizon: usize,
    settings: &OracleSettings,
) -> Result<Vec<Comparison>> {
    states
        .iter()
        .map(|s| {
            let refs = env.reference(s, horizon)?;
            Ok(Comparison {
                policy: policy.forward(&s.x, &refs)?,
                oracle: solve_state(env, s, horizon, settings)?,
                state: s.clone(),
            })
        })
        .collect()
}

fn aggregate(horizon: usize, m: usize, samples: &[Vec<f64>], len: usize) -> Vec<AccuracyRow> {
    (0..len)
        .map(|k| {
            let vals: Vec<f64> = samples.iter().map(|a| a[k]).collect();
            AccuracyRow {
                horizon,
                index: k / m,
                dim: k % m,
                mean: vals.iter().sum::<f64>() / vals.len().max(1) as f64,
                max: vals.iter().cloned().fold(0.0, f64::max),
                count: vals.len(),
            }
        })
        .collect()
}

/// Accuracy over already-solved comparisons; non-converged oracle runs are
/// excluded and counted.
pub fn accuracy_from(
    comparisons: &[Comparison],
    bounds: &ActionBounds<f64>,
    horizon: usize,
    first_only: bool,
) -> Result<(Vec<AccuracyRow>, usize)> {
    let m = bounds.dim();
    let len = if first_only { m } else { horizon * m };
    let mut samples = Vec::with_capacity(comparisons.len());
    let mut excluded = 0;
    for c in comparisons {
        if !c.oracle.converged {
            excluded += 1;
            continue;
        }
        let acc = relative_accuracy(c.policy.data(), c.oracle.u.data(), bounds)?;
        samples.push(acc[..len].to_vec());
    }
    Ok((aggregate(horizon, m, &samples, len), excluded))
}

fn check_failures(excluded: usize, total: usize, cfg: &AccuracyConfig, horizon: usize) -> Result<()> {
    if total > 0 && excluded as f64 / total as f64 > cfg.max_failure_rate {
        return Err(Error::Solver(format!(
            "oracle failed to converge on {excluded}/{total} states at N={horizon}"
        )));
    }
    if excluded > 0 {
        warn!("{excluded}/{total} oracle solves excluded at N={horizon}");
    }
    Ok(())
}

pub fn accuracy_sweep(
    policy: &dyn Policy<f64>,
    env: &Env,
    scenario: Scenario,
    mode: AccuracyMode,
    settings: &OracleSettings,
    cfg: &AccuracyConfig,
) -> Result<AccuracyReport> {
    let states = sample_states(env, scenario, cfg.n_states, cfg.seed)?;
    let horizons = match &mode {
        AccuracyMode::FullSequence { horizon } => vec![*horizon],
        AccuracyMode::FirstElement { horizons } => horizons.clone(),
    };
    let first_only = matches!(mode, AccuracyMode::FirstElement { .. });
    let mut rows = Vec::new();
    let mut excluded = Vec::with_capacity(horizons.len());
    for n in horizons {
        let comps = compare(policy, env, &states, n, settings)?;
        let (r, ex) = accuracy_from(&comps, env.bounds(), n, first_only)?;
        check_failures(ex, states.len(), cfg, n)?;
        rows.extend(r);
        excluded.push((n, ex));
    }
    Ok(AccuracyReport {
        scenario,
        mode,
        rows,
        sampled: states.len(),
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        let b = ActionBounds::vehicle();
        assert_eq!(relative_accuracy(&[0.1, -0.2], &[0.1, -0.2], &b).unwrap(), vec![0.0, 0.0]);
        let full = relative_accuracy(&b.hi, &b.lo, &b).unwrap();
        assert!(full.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let a = relative_accuracy(&[0.3, 0.0], &[0.0, 0.0], &b).unwrap();
        assert!((a[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn degenerate_bounds_rejected() {
        let b = ActionBounds {
            lo: vec![1.0],
            hi: vec![1.0],
        };
        assert!(matches!(relative_accuracy(&[1.0], &[1.0], &b), Err(Error::DegenerateBounds { .. })));
    }

    proptest! {
        #[test]
        fn shift_and_scale_consistent(a in -3.0f64..3.0, s in -3.0f64..3.0, c in -5.0f64..5.0, k in 0.1f64..10.0) {
            let b = ActionBounds::new(vec![-3.0], vec![3.0]).unwrap();
            let base = relative_accuracy(&[a], &[s], &b).unwrap()[0];
            let shifted = relative_accuracy(&[a + c], &[s + c], &b).unwrap()[0];
            let scaled_b = ActionBounds::new(vec![-3.0 * k], vec![3.0 * k]).unwrap();
            let scaled = relative_accuracy(&[a * k], &[s * k], &scaled_b).unwrap()[0];
            prop_assert!((base - shifted).abs() < 1e-12);
            prop_assert!((base - scaled).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}
