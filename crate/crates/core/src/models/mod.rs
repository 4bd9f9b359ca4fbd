//! Differentiable plant models, running costs, reference generators and rollout.
//!
//! Every model exists twice: a plain version over slices, used to simulate the
//! environment, and a tape version over batched `B x 1` column tensors, used
//! for rollouts that need gradients. Tests keep the two in agreement.

mod bicycle;
mod cost;
mod diffdrive;
mod linear;
mod reference;
mod rollout;

pub use bicycle::{bicycle_step, Bicycle, BicycleParams, VehicleInput, VehicleState};
pub use cost::{running_cost_avoid, running_cost_track, CostWeights, ObstacleCost, ObstaclePenalty, TrackingCost, TrackingWeights};
pub use diffdrive::{diffdrive_step, DiffDrive, RobotInput, RobotState};
pub use linear::{LinearSystem, QuadraticCost};
pub use reference::{
    gen_double_lane_change, gen_reference, gen_sine_reference, DoubleLaneChangePath, Path, ReferenceWindow, SinePath,
    StraightPath,
};
pub use rollout::{horizon_cost, rollout, rollout_batch, RolloutOutput};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Control period used by both tasks (10 Hz).
pub const DT: f64 = 0.1;

/// Where the physical quantities read by costs and policy features live in a
/// plant's state vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub px: usize,
    pub py: usize,
    pub phi: usize,
    pub v: usize,
    pub omega: usize,
    /// `(p_x^c - p_x, p_y^c - p_y)` offsets to a static obstacle.
    pub obstacle: Option<(usize, usize)>,
}

/// Discrete-time dynamics `x+ = f(x, u)`.
pub trait Dynamics<T: Real>: Send + Sync {
    fn n_state(&self) -> usize;
    fn n_input(&self) -> usize;
    fn layout(&self) -> Option<StateLayout>;
    fn step(&self, x: &[T], u: &[T]) -> Result<Vec<T>>;
    /// Batched step: each entry of `x` and `u` is a `B x 1` column.
    fn step_tape(&self, tape: &mut Tape<T>, x: &[Tensor<T>], u: &[Tensor<T>]) -> Result<Vec<Tensor<T>>>;
}

/// Running cost `l(x, x^R, u)`.
pub trait RunningCost<T: Real>: Send + Sync {
    fn eval(&self, x: &[T], r: &[T], u: &[T]) -> T;
    /// Batched cost over `B x 1` columns; returns a `B x 1` column.
    fn eval_tape(&self, tape: &mut Tape<T>, x: &[Tensor<T>], r: &[Tensor<T>], u: &[Tensor<T>]) -> Result<Tensor<T>>;
}

/// Per-dimension actuator box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Real> ActionBounds<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Config("bounds need matching non-empty lo/hi".into()));
        }
        for (&l, &h) in lo.iter().zip(&hi) {
            if !(l < h) {
                return Err(Error::DegenerateBounds {
                    lo: l.as_f64(),
                    hi: h.as_f64(),
                });
            }
        }
        Ok(Self { lo, hi })
    }

    /// `a_x` in [-3, 3] m/s^2, `delta` in [-0.52, 0.52] rad.
    pub fn vehicle() -> Self {
        Self {
            lo: vec![T::lit(-3.0), T::lit(-0.52)],
            hi: vec![T::lit(3.0), T::lit(0.52)],
        }
    }

    /// Increments bounded by `0.8 / f` and `0.4 / f`.
    pub fn robot(f: f64) -> Self {
        Self {
            lo: vec![T::lit(-0.8 / f), T::lit(-0.4 / f)],
            hi: vec![T::lit(0.8 / f), T::lit(0.4 / f)],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn range(&self, i: usize) -> T {
        self.hi[i] - self.lo[i]
    }

    pub fn contains(&self, u: &[T]) -> bool {
        u.iter().enumerate().all(|(i, &v)| v >= self.lo[i % self.dim()] && v <= self.hi[i % self.dim()])
    }
}

/// Elementwise clip to the bounds; `raw` may hold several consecutive inputs.
pub fn clamp_input<T: Real>(raw: &[T], bounds: &ActionBounds<T>) -> Vec<T> {
    let d = bounds.dim();
    raw.iter()
        .enumerate()
        .map(|(i, &v)| v.max(bounds.lo[i % d]).min(bounds.hi[i % d]))
        .collect()
}

/// `N x n_input` control sequence, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSequence<T> {
    n_input: usize,
    data: Vec<T>,
}

impl<T: Real> ControlSequence<T> {
    pub fn new(n_input: usize, data: Vec<T>) -> Result<Self> {
        if n_input == 0 || data.len() % n_input != 0 {
            return Err(Error::InvalidShape {
                shape: vec![data.len()],
                reason: format!("not a multiple of n_input={n_input}"),
            });
        }
        Ok(Self { n_input, data })
    }

    pub fn zeros(horizon: usize, n_input: usize) -> Self {
        Self {
            n_input,
            data: vec![T::zero(); horizon * n_input],
        }
    }

    pub fn horizon(&self) -> usize {
        self.data.len() / self.n_input
    }

    pub fn n_input(&self) -> usize {
        self.n_input
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n_input..(i + 1) * self.n_input]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[self.horizon(), self.n_input], self.data.clone()).expect("consistent shape")
    }

    /// Drops the first row and repeats the last one (receding-horizon warm start).
    pub fn shifted(&self) -> Self {
        let n = self.horizon();
        let mut data = Vec::with_capacity(self.data.len());
        for i in 1..n {
            data.extend_from_slice(self.row(i));
        }
        data.extend_from_slice(self.row(n - 1));
        Self {
            n_input: self.n_input,
            data,
        }
    }
}

/// Splits a `B x n` matrix into `n` columns of shape `B x 1`.
pub(crate) fn columns<T: Real>(tape: &mut Tape<T>, m: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    (0..m.cols()).map(|j| tape.slice(m, 1, j, 1)).collect()
}

/// Builds constant `B x 1` columns from row-major per-sample vectors.
pub(crate) fn constant_columns<T: Real>(rows: &[&[T]], width: usize) -> Result<Vec<Tensor<T>>> {
    (0..width)
        .map(|j| {
            let col: Vec<T> = rows.iter().map(|r| r[j]).collect();
            Tensor::new(&[rows.len(), 1], col)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clamp_examples() {
        let b = ActionBounds::<f64>::vehicle();
        assert_eq!(clamp_input(&[-5.0, 0.6], &b), vec![-3.0, 0.52]);
        assert_eq!(clamp_input(&[0.0, 0.0], &b), vec![0.0, 0.0]);
    }

    #[test]
    fn degenerate_bounds_rejected() {
        assert!(ActionBounds::new(vec![1.0], vec![1.0]).is_err());
        assert!(ActionBounds::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn shifted_repeats_last() {
        let u = ControlSequence::new(2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(u.shifted().data(), &[3.0, 4.0, 5.0, 6.0, 5.0, 6.0]);
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent(raw in prop::collection::vec(-10.0f64..10.0, 0..12)) {
            let b = ActionBounds::<f64>::robot(10.0);
            let once = clamp_input(&raw, &b);
            prop_assert_eq!(clamp_input(&once, &b), once.clone());
            prop_assert!(b.contains(&once));
        }
    }
}
