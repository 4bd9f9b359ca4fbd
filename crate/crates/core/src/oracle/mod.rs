//! Numerical finite-horizon optimal control: box-constrained minimization of
//! the horizon cost over the whole control sequence, used as ground truth.

mod lqr;
mod solver;

pub use lqr::lqr_closed_form;
pub use solver::{first_order_residual, projected_gradient, solve, solve_batch, value_and_grad, write_solutions_csv};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ActionBounds, ControlSequence, Dynamics, ReferenceWindow, RunningCost};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    pub max_iterations: usize,
    /// Tolerance on the Euclidean norm of the projected gradient.
    pub tol: f64,
    /// Random starts in addition to the zero sequence (and any warm start).
    pub restarts: usize,
    pub memory: usize,
    pub seed: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            tol: 1e-8,
            restarts: 8,
            memory: 10,
            seed: 0,
        }
    }
}

/// One instance of the horizon problem.
pub struct OracleProblem<'a> {
    pub dynamics: &'a dyn Dynamics<f64>,
    pub cost: &'a dyn RunningCost<f64>,
    pub x0: Vec<f64>,
    pub refs: ReferenceWindow<f64>,
    pub bounds: ActionBounds<f64>,
    pub settings: OracleSettings,
    /// Extra starting point, e.g. the shifted previous solution.
    pub warm_start: Option<ControlSequence<f64>>,
}

impl<'a> OracleProblem<'a> {
    pub fn new(
        dynamics: &'a dyn Dynamics<f64>,
        cost: &'a dyn RunningCost<f64>,
        x0: Vec<f64>,
        refs: ReferenceWindow<f64>,
        bounds: ActionBounds<f64>,
    ) -> Self {
        Self {
            dynamics,
            cost,
            x0,
            refs,
            bounds,
            settings: OracleSettings::default(),
            warm_start: None,
        }
    }

    pub fn with_settings(mut self, settings: OracleSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_warm_start(mut self, u: ControlSequence<f64>) -> Self {
        self.warm_start = Some(u);
        self
    }

    pub fn horizon(&self) -> usize {
        self.refs.len()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.bounds.dim() != self.dynamics.n_input() {
            return Err(Error::ShapeMismatch {
                op: "oracle",
                left: vec![self.bounds.dim()],
                right: vec![self.dynamics.n_input()],
            });
        }
        if self.x0.len() != self.dynamics.n_state() {
            return Err(Error::ShapeMismatch {
                op: "oracle",
                left: vec![self.x0.len()],
                right: vec![self.dynamics.n_state()],
            });
        }
        if let Some(w) = &self.warm_start {
            if w.horizon() != self.horizon() || w.n_input() != self.bounds.dim() {
                return Err(Error::HorizonMismatch {
                    expected: self.horizon(),
                    got: w.horizon(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleSolution {
    pub u: ControlSequence<f64>,
    pub cost: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Serialize for ControlSequence<f64> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = (0..self.horizon()).map(|i| self.row(i)).collect();
        rows.serialize(s)
    }
}
