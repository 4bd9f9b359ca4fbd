//! Simulation environments: a plant, its running cost, and a time-indexed
//! reference, with the random reset distribution used for training and
//! accuracy sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    gen_reference, ActionBounds, Bicycle, CostWeights, DiffDrive, DoubleLaneChangePath, Dynamics, ObstacleCost, Path,
    ReferenceWindow, RunningCost, SinePath, StateLayout, StraightPath, TrackingCost, DT,
};
use crate::policy::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Sine,
    DoubleLaneChange,
    /// Straight path with a static obstacle near it.
    Obstacle,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Sine => "sine",
            Scenario::DoubleLaneChange => "double_lane_change",
            Scenario::Obstacle => "obstacle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plant {
    Vehicle,
    Robot,
}

/// Reset distribution around a random point of the reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResetConfig {
    /// Reference clock drawn uniformly from `0..max_clock`.
    pub max_clock: usize,
    pub lateral: f64,
    pub heading: f64,
    /// Speed drawn from `ref speed +- speed_spread`.
    pub speed_spread: f64,
    /// Obstacle placed this far ahead of the robot, uniformly.
    pub obstacle_ahead: (f64, f64),
    pub obstacle_lateral: f64,
}

impl Default for ResetConfig {
    fn default() -> Self {
        Self {
            max_clock: 100,
            lateral: 1.0,
            heading: 0.3,
            speed_spread: 1.0,
            obstacle_ahead: (-1.0, 4.0),
            obstacle_lateral: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub plant: Plant,
    /// Training mixes these uniformly.
    pub scenarios: Vec<Scenario>,
    pub speed: f64,
    pub cost: CostWeights,
    pub reset: ResetConfig,
    pub sine: SinePath,
    pub double_lane_change: DoubleLaneChangePath,
    /// Obstacle position for closed-loop clearance runs.
    pub eval_obstacle: (f64, f64),
}

impl TaskConfig {
    pub fn tracking() -> Self {
        Self {
            plant: Plant::Vehicle,
            scenarios: vec![Scenario::Sine, Scenario::DoubleLaneChange],
            speed: 5.0,
            cost: CostWeights::default(),
            reset: ResetConfig::default(),
            sine: SinePath::default(),
            double_lane_change: DoubleLaneChangePath::default(),
            eval_obstacle: (3.0, 0.0),
        }
    }

    pub fn obstacle() -> Self {
        Self {
            plant: Plant::Robot,
            scenarios: vec![Scenario::Obstacle],
            speed: 0.4,
            reset: ResetConfig {
                lateral: 0.3,
                speed_spread: 0.2,
                ..Default::default()
            },
            ..Self::tracking()
        }
    }
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self::tracking()
    }
}

/// A plant state together with the reference clock it is tracking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub x: Vec<f64>,
    pub clock: usize,
    pub scenario: Scenario,
}

pub struct Env {
    pub config: TaskConfig,
    dynamics: Box<dyn Dynamics<f64>>,
    cost: Box<dyn RunningCost<f64>>,
    layout: StateLayout,
    bounds: ActionBounds<f64>,
}

impl Env {
    pub fn new(config: TaskConfig) -> Result<Self> {
        if config.scenarios.is_empty() {
            return Err(Error::Config("task needs at least one scenario".into()));
        }
        let (dynamics, bounds): (Box<dyn Dynamics<f64>>, _) = match config.plant {
            Plant::Vehicle => (Box::new(Bicycle::default()), ActionBounds::vehicle()),
            Plant::Robot => (Box::new(DiffDrive::default()), ActionBounds::robot(1.0 / DT)),
        };
        let layout = dynamics.layout().expect("plants with a layout");
        let obstacle = config.scenarios.contains(&Scenario::Obstacle);
        if obstacle != layout.obstacle.is_some() || (obstacle && config.scenarios.len() > 1) {
            return Err(Error::Config("obstacle scenario requires the robot plant and vice versa".into()));
        }
        let cost: Box<dyn RunningCost<f64>> = if obstacle {
            Box::new(ObstacleCost::new(config.cost, layout))
        } else {
            Box::new(TrackingCost::new(config.cost.tracking, layout))
        };
        Ok(Self {
            config,
            dynamics,
            cost,
            layout,
            bounds,
        })
    }

    pub fn dynamics(&self) -> &dyn Dynamics<f64> {
        self.dynamics.as_ref()
    }

    pub fn cost(&self) -> &dyn RunningCost<f64> {
        self.cost.as_ref()
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn bounds(&self) -> &ActionBounds<f64> {
        &self.bounds
    }

    pub fn features(&self) -> FeatureMap {
        match self.config.plant {
            Plant::Vehicle => FeatureMap::vehicle(),
            Plant::Robot => FeatureMap::robot(),
        }
    }

    fn path(&self, scenario: Scenario) -> &dyn Path {
        const STRAIGHT: StraightPath = StraightPath { y: 0.0 };
        match scenario {
            Scenario::Sine => &self.config.sine,
            Scenario::DoubleLaneChange => &self.config.double_lane_change,
            Scenario::Obstacle => &STRAIGHT,
        }
    }

    /// The `n`-row window starting at the state's clock.
    pub fn reference(&self, s: &EnvState, n: usize) -> Result<ReferenceWindow<f64>> {
        gen_reference(self.path(s.scenario), s.clock, n, self.config.speed, DT)
    }

    /// Starting state of a closed-loop run: on the reference at clock 0.
    pub fn initial_state(&self, scenario: Scenario) -> Result<EnvState> {
        let s = EnvState {
            x: vec![0.0; self.dynamics.n_state()],
            clock: 0,
            scenario,
        };
        let r = *self.reference(&s, 1)?.row(0);
        let mut x = s.x;
        x[self.layout.px] = r[0];
        x[self.layout.py] = r[1];
        x[self.layout.phi] = r[2];
        x[self.layout.v] = r[3];
        if let Some((ix, iy)) = self.layout.obstacle {
            x[ix] = self.config.eval_obstacle.0 - r[0];
            x[iy] = self.config.eval_obstacle.1 - r[1];
        }
        Ok(EnvState { x, ..s })
    }

    pub fn reset<R: Rng>(&self, rng: &mut R) -> Result<EnvState> {
        let scenario = self.config.scenarios[rng.gen_range(0..self.config.scenarios.len())];
        self.reset_in(scenario, rng)
    }

    /// Random state around the reference of one scenario.
    pub fn reset_in<R: Rng>(&self, scenario: Scenario, rng: &mut R) -> Result<EnvState> {
        let rc = &self.config.reset;
        let clock = rng.gen_range(0..rc.max_clock.max(1));
        let s = EnvState {
            x: vec![0.0; self.dynamics.n_state()],
            clock,
            scenario,
        };
        let r = *self.reference(&s, 1)?.row(0);
        let sym = |rng: &mut R, a: f64| if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 };
        let lat = sym(rng, rc.lateral);
        let mut x = s.x;
        x[self.layout.px] = r[0] - lat * r[2].sin();
        x[self.layout.py] = r[1] + lat * r[2].cos();
        x[self.layout.phi] = r[2] + sym(rng, rc.heading);
        x[self.layout.v] = r[3] + sym(rng, rc.speed_spread);
        if let Some((ix, iy)) = self.layout.obstacle {
            let (lo, hi) = rc.obstacle_ahead;
            let ahead = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            let y_c = sym(rng, rc.obstacle_lateral);
            x[ix] = ahead;
            x[iy] = y_c - x[self.layout.py];
        }
        Ok(EnvState { x, ..s })
    }

    pub fn step(&self, s: &EnvState, u: &[f64]) -> Result<EnvState> {
        let x = self.dynamics.step(&s.x, u)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "env_step" });
        }
        Ok(EnvState {
            x,
            clock: s.clock + 1,
            scenario: s.scenario,
        })
    }

    /// Running cost of applying `u` at `s`.
    pub fn stage_cost(&self, s: &EnvState, u: &[f64]) -> Result<f64> {
        let r = self.reference(s, 1)?;
        Ok(self.cost.eval(&s.x, r.row(0), u))
    }

    /// Lateral position of the scenario's path at longitudinal position `px`.
    pub fn path_y(&self, scenario: Scenario, px: f64) -> f64 {
        self.path(scenario).lateral(px).0
    }

    /// Signed clearance `l_c` to the obstacle, if the state carries one.
    pub fn clearance(&self, s: &EnvState) -> Option<f64> {
        self.layout
            .obstacle
            .map(|(ix, iy)| self.config.cost.clearance(s.x[ix], s.x[iy]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reset_stays_within_distribution() {
        let env = Env::new(TaskConfig::tracking()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let s = env.reset(&mut rng).unwrap();
            let r = *env.reference(&s, 1).unwrap().row(0);
            let dist = ((s.x[0] - r[0]).powi(2) + (s.x[1] - r[1]).powi(2)).sqrt();
            assert!(dist <= 1.0 + 1e-12);
            assert!((s.x[3] - 5.0).abs() <= 1.0);
            assert!((s.x[2] - r[2]).abs() <= 0.3);
        }
    }

    #[test]
    fn initial_state_sits_on_reference() {
        let env = Env::new(TaskConfig::tracking()).unwrap();
        let s = env.initial_state(Scenario::Sine).unwrap();
        assert!(env.stage_cost(&s, &[0.0, 0.0]).unwrap() > 0.0);
        let robot = Env::new(TaskConfig::obstacle()).unwrap();
        let s = robot.initial_state(Scenario::Obstacle).unwrap();
        assert_eq!((s.x[5], s.x[6]), (3.0, 0.0));
        assert!((robot.clearance(&s).unwrap() - (3.0 - 0.7765)).abs() < 1e-12);
    }

    #[test]
    fn mismatched_scenarios_rejected() {
        let mut cfg = TaskConfig::tracking();
        cfg.scenarios.push(Scenario::Obstacle);
        assert!(Env::new(cfg).is_err());
        let mut cfg = TaskConfig::tracking();
        cfg.scenarios.clear();
        assert!(Env::new(cfg).is_err());
    }
}
