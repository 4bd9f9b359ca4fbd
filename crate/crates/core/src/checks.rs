//! Self-checks shared by the command line and the acceptance suite:
//! finite-difference gradient verification, oracle validation on a linear
//! quadratic instance, and reference sensitivity probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check_with, op_suite, GradCheckOptions, GradCheckReport, OpCheck, ParamSet, Tape, Tensor};
use crate::config::GradCheckConfig;
use crate::env::{Env, EnvState};
use crate::error::Result;
use crate::models::{rollout_batch, ActionBounds, LinearSystem, QuadraticCost, ReferenceWindow};
use crate::oracle::{first_order_residual, lqr_closed_form, solve, OracleProblem, OracleSettings};
use crate::policy::Policy;

fn rebuild(names: &[String], values: &[Tensor<f64>]) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (n, v) in names.iter().zip(values) {
        p.insert(n.clone(), v.clone());
    }
    p
}

/// Gains near 1, everything else in `[-0.5, 0.5)`.
pub fn random_params(like: &ParamSet<f64>, rng: &mut ChaCha8Rng) -> ParamSet<f64> {
    let mut out = ParamSet::new();
    for (name, t) in like.iter() {
        let centre = if name.ends_with("gain") { 1.0 } else { 0.0 };
        let data = (0..t.len()).map(|_| centre + rng.gen_range(-0.5..0.5)).collect();
        out.insert(name.clone(), Tensor::new(t.shape(), data).expect("shape matches data"));
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct CompositeCheck {
    pub seed: u64,
    /// `sum(W * U)` through the policy alone.
    pub policy: GradCheckReport,
    /// Batch-mean horizon cost through the policy and the rollout.
    pub rollout: GradCheckReport,
}

/// Checks `dU/dtheta` and `dJ/dtheta` at random parameters and random reset states.
pub fn composite_check(policy: &dyn Policy<f64>, env: &Env, cfg: &GradCheckConfig, seed: u64) -> Result<CompositeCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<EnvState> = (0..cfg.batch).map(|_| env.reset(&mut rng)).collect::<Result<_>>()?;
    let xs: Vec<Vec<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let refs = states.iter().map(|s| env.reference(s, cfg.horizon)).collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = policy.params().names().cloned().collect();
    let values: Vec<Tensor<f64>> = random_params(policy.params(), &mut rng).iter().map(|(_, t)| t.clone()).collect();
    let n_out = cfg.batch * cfg.horizon * policy.n_input();
    let weights = Tensor::new(
        &[cfg.batch * cfg.horizon, policy.n_input()],
        (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let opts = GradCheckOptions {
        h: cfg.h,
        tol: cfg.tol,
        floor: cfg.floor,
        max_coords: Some(cfg.max_coords),
        seed,
    };
    let through_policy = |tape: &mut Tape<f64>, p: &[Tensor<f64>]| {
        let u = policy.forward_with(tape, &rebuild(&names, p), &xs, &refs)?;
        let wu = tape.mul(&u, &weights)?;
        tape.sum(&wu)
    };
    let through_rollout = |tape: &mut Tape<f64>, p: &[Tensor<f64>]| {
        let u = policy.forward_with(tape, &rebuild(&names, p), &xs, &refs)?;
        let out = rollout_batch(tape, env.dynamics(), env.cost(), &xs, &refs, &u)?;
        tape.mean(&out.costs)
    };
    Ok(CompositeCheck {
        seed,
        policy: grad_check_with(through_policy, &values, &opts)?,
        rollout: grad_check_with(through_rollout, &values, &opts)?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckSummary {
    pub ops: Vec<OpCheck>,
    pub composite: Vec<CompositeCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// The op suite plus the composite check over `cfg.seeds` seeds, each with a
/// policy built by `build(seed)`.
pub fn gradcheck_suite(
    env: &Env,
    cfg: &GradCheckConfig,
    build: &dyn Fn(u64) -> Result<Box<dyn Policy<f64>>>,
) -> Result<GradCheckSummary> {
    let ops = op_suite(0, cfg.h, cfg.tol)?;
    let composite = (0..cfg.seeds as u64)
        .map(|seed| composite_check(build(seed)?.as_ref(), env, cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    let max_rel_error = ops
        .iter()
        .map(|c| c.report.max_rel_error)
        .chain(composite.iter().flat_map(|c| [c.policy.max_rel_error, c.rollout.max_rel_error]))
        .fold(0.0, f64::max);
    let passed = ops.iter().all(|c| c.report.passed) && composite.iter().all(|c| c.policy.passed && c.rollout.passed);
    Ok(GradCheckSummary {
        ops,
        composite,
        max_rel_error,
        passed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleValidation {
    pub horizon: usize,
    /// Largest `|u - u_riccati|` with inactive bounds.
    pub max_control_error: f64,
    pub residual_inactive: f64,
    pub residual_active: f64,
    /// Every element of the active-bound solution lies inside the box.
    pub feasible: bool,
    /// Some element of the active-bound solution sits on a bound.
    pub bounds_active: bool,
    pub passed: bool,
}

/// Double integrator at `dt = 0.1`, identity weights: solver against the
/// Riccati recursion with wide bounds, then with bounds that must bind.
pub fn oracle_validation(settings: &OracleSettings, horizon: usize) -> Result<OracleValidation> {
    let sys = LinearSystem::double_integrator(0.1);
    let cost = QuadraticCost::identity(2, 1);
    let wide = ActionBounds::new(vec![-100.0], vec![100.0])?;
    let x0 = vec![1.0, -0.5];
    let p = OracleProblem::new(&sys, &cost, x0.clone(), ReferenceWindow::zeros(horizon), wide).with_settings(settings.clone());
    let sol = solve(&p)?;
    let exact = lqr_closed_form(&sys, &cost, horizon, &x0)?;
    let max_control_error = sol
        .u
        .data()
        .iter()
        .zip(exact.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let residual_inactive = first_order_residual(&p, &sol.u)?;

    let tight = ActionBounds::new(vec![-0.5], vec![0.5])?;
    let p = OracleProblem::new(&sys, &cost, vec![10.0, 5.0], ReferenceWindow::zeros(horizon), tight.clone())
        .with_settings(settings.clone());
    let sol = solve(&p)?;
    let residual_active = first_order_residual(&p, &sol.u)?;
    let feasible = tight.contains(sol.u.data());
    let bounds_active = sol.u.data().iter().any(|&u| u == tight.lo[0] || u == tight.hi[0]);
    Ok(OracleValidation {
        horizon,
        max_control_error,
        residual_inactive,
        residual_active,
        feasible,
        bounds_active,
        passed: max_control_error < 1e-6 && residual_inactive < 1e-8 && residual_active < 1e-8 && feasible && bounds_active,
    })
}

/// Central-difference sensitivity of the first planned input to the last
/// reference row: the largest `|dU[0]_j / dx^R_{N-1,k}|` over `j, k`.
pub fn last_reference_sensitivity(policy: &dyn Policy<f64>, x: &[f64], refs: &ReferenceWindow<f64>, eps: f64) -> Result<f64> {
    let last = refs.len() - 1;
    let mut worst = 0.0f64;
    for k in 0..4 {
        let shifted = |d: f64| -> Result<Vec<f64>> {
            let mut rows = refs.rows().to_vec();
            rows[last][k] += d;
            Ok(policy.forward(x, &ReferenceWindow::new(rows)?)?.row(0).to_vec())
        };
        let (plus, minus) = (shifted(eps)?, shifted(-eps)?);
        for (a, b) in plus.iter().zip(&minus) {
            worst = worst.max(((a - b) / (2.0 * eps)).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::env::Scenario;

    #[test]
    fn oracle_validation_passes() {
        let v = oracle_validation(&OracleSettings::default(), 10).unwrap();
        assert!(v.passed, "{v:?}");
    }

    #[test]
    fn default_gradcheck_passes_on_two_seeds() {
        let cfg = ExperimentConfig::default();
        let env = cfg.env().unwrap();
        let gc = GradCheckConfig {
            seeds: 2,
            ..cfg.gradcheck.clone()
        };
        let s = gradcheck_suite(&env, &gc, &|seed| cfg.build_policy(&env, seed)).unwrap();
        assert!(s.passed, "max rel error {}", s.max_rel_error);
        assert_eq!(s.composite.len(), 2);
    }

    #[test]
    fn last_reference_moves_first_input() {
        let cfg = ExperimentConfig::default();
        let env = cfg.env().unwrap();
        let mut p = cfg.build_policy(&env, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        *p.params_mut() = random_params(p.params(), &mut rng);
        let s = env.initial_state(Scenario::Sine).unwrap();
        let refs = env.reference(&s, 20).unwrap();
        assert!(last_reference_sensitivity(p.as_ref(), &s.x, &refs, 1e-4).unwrap() > 1e-9);
    }
}
