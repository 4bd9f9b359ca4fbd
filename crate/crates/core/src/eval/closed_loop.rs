use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvState, Scenario};
use crate::error::Result;
use crate::models::{ControlSequence, Dynamics, ReferenceWindow, RunningCost, StateLayout};
use crate::oracle::{solve, OracleProblem, OracleSettings};
use crate::policy::Policy;

/// Lateral error beyond which a run is aborted and flagged.
pub const DIVERGENCE_LATERAL: f64 = 5.0;

/// Anything that plans an `N`-step sequence from the current state.
pub trait Controller {
    fn name(&self) -> String;
    fn plan(&mut self, x: &[f64], refs: &ReferenceWindow<f64>) -> Result<ControlSequence<f64>>;
}

pub struct PolicyController<'a> {
    pub policy: &'a dyn Policy<f64>,
    pub label: String,
}

impl<'a> PolicyController<'a> {
    pub fn new(policy: &'a dyn Policy<f64>, label: impl Into<String>) -> Self {
        Self {
            policy,
            label: label.into(),
        }
    }
}

impl Controller for PolicyController<'_> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn plan(&mut self, x: &[f64], refs: &ReferenceWindow<f64>) -> Result<ControlSequence<f64>> {
        self.policy.forward(x, refs)
    }
}

/// Receding-horizon MPC: the oracle solved online, warm-started from the
/// shifted previous solution.
pub struct OracleController<'a> {
    pub dynamics: &'a dyn Dynamics<f64>,
    pub cost: &'a dyn RunningCost<f64>,
    pub bounds: crate::models::ActionBounds<f64>,
    pub settings: OracleSettings,
    previous: Option<ControlSequence<f64>>,
}

impl<'a> OracleController<'a> {
    pub fn new(env: &'a Env, settings: OracleSettings) -> Self {
        Self {
            dynamics: env.dynamics(),
            cost: env.cost(),
            bounds: env.bounds().clone(),
            settings,
            previous: None,
        }
    }
}

impl Controller for OracleController<'_> {
    fn name(&self) -> String {
        "mpc".into()
    }

    fn plan(&mut self, x: &[f64], refs: &ReferenceWindow<f64>) -> Result<ControlSequence<f64>> {
        let mut p = OracleProblem::new(self.dynamics, self.cost, x.to_vec(), refs.clone(), self.bounds.clone())
            .with_settings(self.settings.clone());
        if let Some(prev) = self.previous.take() {
            if prev.horizon() == refs.len() {
                p = p.with_warm_start(prev.shifted());
            }
        }
        let sol = solve(&p)?;
        self.previous = Some(sol.u.clone());
        Ok(sol.u)
    }
}

/// Replays a fixed input list, one row per call.
pub struct ReplayController {
    pub inputs: Vec<Vec<f64>>,
    cursor: usize,
}

impl ReplayController {
    pub fn new(inputs: Vec<Vec<f64>>) -> Self {
        Self { inputs, cursor: 0 }
    }
}

impl Controller for ReplayController {
    fn name(&self) -> String {
        "replay".into()
    }

    fn plan(&mut self, _x: &[f64], refs: &ReferenceWindow<f64>) -> Result<ControlSequence<f64>> {
        let m = self.inputs.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(refs.len() * m);
        for i in 0..refs.len() {
            let k = (self.cursor + i).min(self.inputs.len() - 1);
            data.extend_from_slice(&self.inputs[k]);
        }
        self.cursor += 1;
        ControlSequence::new(m, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub px: f64,
    pub py: f64,
    pub phi: f64,
    pub v: f64,
    pub ref_px: f64,
    pub ref_py: f64,
    /// Path lateral position at this step's `px`.
    pub path_py: f64,
    pub u0: f64,
    pub u1: f64,
    pub stage_cost: f64,
    pub clearance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub controller: String,
    pub scenario: String,
    pub horizon: usize,
    pub steps: usize,
    /// Mean `|p_y - p_y^R|` against the time-indexed reference point.
    pub delta_y: f64,
    /// Mean lateral deviation from the path, `|p_y - y_path(p_x)|`.
    pub delta_y_path: f64,
    /// Mean running cost per step.
    pub cost: f64,
    pub total_cost: f64,
    pub diverged: bool,
    pub min_clearance: Option<f64>,
    pub trajectory: Vec<StepLog>,
}

/// Generic receding-horizon loop over an arbitrary reference source.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    controller: &mut dyn Controller,
    dynamics: &dyn Dynamics<f64>,
    cost: &dyn RunningCost<f64>,
    layout: &StateLayout,
    clearance: &dyn Fn(&[f64]) -> Option<f64>,
    path_y: &dyn Fn(f64) -> f64,
    reference: &dyn Fn(usize, usize) -> Result<ReferenceWindow<f64>>,
    x0: Vec<f64>,
    steps: usize,
    horizon: usize,
    scenario: &str,
) -> Result<ClosedLoopReport> {
    let mut x = x0;
    let mut traj = Vec::with_capacity(steps);
    let mut diverged = false;
    for t in 0..steps {
        let refs = reference(t, horizon)?;
        let r = *refs.row(0);
        let path_py = path_y(x[layout.px]);
        if (x[layout.py] - path_py).abs() > DIVERGENCE_LATERAL || x.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        let u = controller.plan(&x, &refs)?;
        let u0 = u.row(0).to_vec();
        traj.push(StepLog {
            step: t,
            px: x[layout.px],
            py: x[layout.py],
            phi: x[layout.phi],
            v: x[layout.v],
            ref_px: r[0],
            ref_py: r[1],
            path_py,
            u0: u0[0],
            u1: u0[1],
            stage_cost: cost.eval(&x, &r, &u0),
            clearance: clearance(&x),
        });
        match dynamics.step(&x, &u0) {
            Ok(next) => x = next,
            Err(_) => {
                diverged = true;
                break;
            }
        }
    }
    let n = traj.len().max(1) as f64;
    let total_cost: f64 = traj.iter().map(|s| s.stage_cost).sum();
    Ok(ClosedLoopReport {
        controller: controller.name(),
        scenario: scenario.into(),
        horizon,
        steps,
        delta_y: traj.iter().map(|s| (s.py - s.ref_py).abs()).sum::<f64>() / n,
        delta_y_path: traj.iter().map(|s| (s.py - s.path_py).abs()).sum::<f64>() / n,
        cost: total_cost / n,
        total_cost,
        diverged,
        min_clearance: traj.iter().filter_map(|s| s.clearance).reduce(f64::min),
        trajectory: traj,
    })
}

/// Closed-loop run from the scenario's initial state.
pub fn closed_loop_eval(
    controller: &mut dyn Controller,
    env: &Env,
    scenario: Scenario,
    steps: usize,
    horizon: usize,
) -> Result<ClosedLoopReport> {
    let start = env.initial_state(scenario)?;
    let clearance = |x: &[f64]| {
        env.clearance(&EnvState {
            x: x.to_vec(),
            clock: 0,
            scenario,
        })
    };
    let path_y = |px: f64| env.path_y(scenario, px);
    let reference = |clock: usize, n: usize| {
        env.reference(
            &EnvState {
                x: Vec::new(),
                clock,
                scenario,
            },
            n,
        )
    };
    run_closed_loop(
        controller,
        env.dynamics(),
        env.cost(),
        env.layout(),
        &clearance,
        &path_y,
        &reference,
        start.x,
        steps,
        horizon,
        scenario.name(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClearanceReport {
    pub controller: String,
    pub min_clearance: f64,
    /// `min l_c < -r_safe`.
    pub collision: bool,
    pub diverged: bool,
    pub steps: usize,
    pub trajectory: Vec<StepLog>,
}

/// Closed loop past the evaluation obstacle; reports the closest approach.
pub fn obstacle_eval(controller: &mut dyn Controller, env: &Env, steps: usize, horizon: usize) -> Result<ClearanceReport> {
    let run = closed_loop_eval(controller, env, Scenario::Obstacle, steps, horizon)?;
    let min_clearance = run.min_clearance.unwrap_or(f64::INFINITY);
    Ok(ClearanceReport {
        controller: run.controller,
        min_clearance,
        collision: min_clearance < -env.config.cost.r_safe,
        diverged: run.diverged,
        steps: run.trajectory.len(),
        trajectory: run.trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TaskConfig;
    use crate::models::DT;

    #[test]
    fn replayed_trajectory_tracks_itself() {
        let env = Env::new(TaskConfig::tracking()).unwrap();
        let x0 = env.initial_state(Scenario::Sine).unwrap().x;
        let inputs: Vec<Vec<f64>> = (0..40).map(|t| vec![0.3 * (t as f64 * 0.2).sin(), 0.05 * (t as f64 * DT).cos()]).collect();
        let mut xs = vec![x0.clone()];
        for u in &inputs {
            let next = env.dynamics().step(xs.last().unwrap(), u).unwrap();
            xs.push(next);
        }
        let layout = *env.layout();
        let reference = |t: usize, n: usize| {
            ReferenceWindow::new(
                (t..t + n)
                    .map(|k| {
                        let x = &xs[k.min(xs.len() - 1)];
                        [x[layout.px], x[layout.py], x[layout.phi], x[layout.v]]
                    })
                    .collect(),
            )
        };
        let path_y = |px: f64| {
            xs.iter()
                .min_by(|a, b| (a[layout.px] - px).abs().total_cmp(&(b[layout.px] - px).abs()))
                .map(|x| x[layout.py])
                .unwrap()
        };
        let mut ctrl = ReplayController::new(inputs);
        let rep = run_closed_loop(&mut ctrl, env.dynamics(), env.cost(), &layout, &|_| None, &path_y, &reference, x0, 40, 5, "synthetic")
            .unwrap();
        assert_eq!(rep.delta_y, 0.0);
        assert_eq!(rep.delta_y_path, 0.0);
        assert_eq!(rep.trajectory.len(), 40);
        assert!(!rep.diverged);
    }

    #[test]
    fn far_from_reference_flags_divergence() {
        let env = Env::new(TaskConfig::tracking()).unwrap();
        let mut ctrl = ReplayController::new(vec![vec![0.0, 0.0]]);
        let reference = |t: usize, n: usize| {
            ReferenceWindow::new((t..t + n).map(|k| [k as f64 * 0.5, 10.0, 0.0, 5.0]).collect())
        };
        let x0 = vec![0.0, 0.0, 0.0, 5.0, 0.0, 0.0];
        let rep = run_closed_loop(&mut ctrl, env.dynamics(), env.cost(), env.layout(), &|_| None, &|_| 10.0, &reference, x0, 170, 3, "far")
            .unwrap();
        assert!(rep.diverged);
        assert!(rep.trajectory.is_empty());
    }

    #[test]
    fn no_obstacle_on_path_keeps_large_clearance() {
        let mut cfg = TaskConfig::obstacle();
        cfg.eval_obstacle = (0.0, 10.0);
        let env = Env::new(cfg).unwrap();
        let v = env.initial_state(Scenario::Obstacle).unwrap().x[3];
        let mut ctrl = ReplayController::new(vec![vec![0.0, 0.0]]);
        let rep = obstacle_eval(&mut ctrl, &env, 50, 5).unwrap();
        assert_eq!(v, 0.4);
        assert!(rep.min_clearance > 8.0);
        assert!(!rep.collision);
    }
}
