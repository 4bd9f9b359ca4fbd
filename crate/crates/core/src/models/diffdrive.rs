//! Differential-drive kinematics driven by velocity increments, optionally
//! augmented with the offset to a static obstacle.

use serde::{Deserialize, Serialize};

use super::{Dynamics, StateLayout};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState<T> {
    pub p_x: T,
    pub p_y: T,
    pub phi: T,
    pub v: T,
    pub omega: T,
    /// `(p_x^c - p_x, p_y^c - p_y)` when an obstacle is tracked.
    pub obstacle: Option<(T, T)>,
}

impl<T: Real> RobotState<T> {
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = vec![self.p_x, self.p_y, self.phi, self.v, self.omega];
        if let Some((dx, dy)) = self.obstacle {
            v.extend([dx, dy]);
        }
        v
    }

    pub fn from_slice(x: &[T]) -> Self {
        Self {
            p_x: x[0],
            p_y: x[1],
            phi: x[2],
            v: x[3],
            omega: x[4],
            obstacle: (x.len() >= 7).then(|| (x[5], x[6])),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotInput<T> {
    pub dv: T,
    pub domega: T,
}

pub fn diffdrive_step<T: Real>(s: &RobotState<T>, u: &RobotInput<T>, f: f64) -> Result<RobotState<T>> {
    if !(f > 0.0) {
        return Err(Error::Config(format!("control frequency must be positive, got {f}")));
    }
    let inv_f = T::lit(1.0 / f);
    let dx = s.v * s.phi.cos() * inv_f;
    let dy = s.v * s.phi.sin() * inv_f;
    let next = RobotState {
        p_x: s.p_x + dx,
        p_y: s.p_y + dy,
        phi: s.phi + s.omega * inv_f,
        v: s.v + u.dv,
        omega: s.omega + u.domega,
        obstacle: s.obstacle.map(|(ox, oy)| (ox - dx, oy - dy)),
    };
    if next.to_vec().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "diffdrive_step" });
    }
    Ok(next)
}

/// Differential-drive plant; state `(p_x, p_y, phi, v, omega[, obs_dx, obs_dy])`,
/// input `(dv, domega)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffDrive {
    pub frequency: f64,
    pub with_obstacle: bool,
}

impl Default for DiffDrive {
    fn default() -> Self {
        Self {
            frequency: 1.0 / super::DT,
            with_obstacle: true,
        }
    }
}

impl<T: Real> Dynamics<T> for DiffDrive {
    fn n_state(&self) -> usize {
        if self.with_obstacle {
            7
        } else {
            5
        }
    }

    fn n_input(&self) -> usize {
        2
    }

    fn layout(&self) -> Option<StateLayout> {
        Some(StateLayout {
            px: 0,
            py: 1,
            phi: 2,
            v: 3,
            omega: 4,
            obstacle: self.with_obstacle.then_some((5, 6)),
        })
    }

    fn step(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        let s = RobotState::from_slice(&x[..Dynamics::<T>::n_state(self)]);
        let input = RobotInput { dv: u[0], domega: u[1] };
        Ok(diffdrive_step(&s, &input, self.frequency)?.to_vec())
    }

    fn step_tape(&self, tape: &mut Tape<T>, x: &[Tensor<T>], u: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let inv_f = T::lit(1.0 / self.frequency);
        let cos = tape.cos(&x[2])?;
        let sin = tape.sin(&x[2])?;
        let dx = tape.mul(&x[3], &cos)?;
        let dx = tape.scale(&dx, inv_f)?;
        let dy = tape.mul(&x[3], &sin)?;
        let dy = tape.scale(&dy, inv_f)?;
        let dphi = tape.scale(&x[4], inv_f)?;
        let mut next = vec![
            tape.add(&x[0], &dx)?,
            tape.add(&x[1], &dy)?,
            tape.add(&x[2], &dphi)?,
            tape.add(&x[3], &u[0])?,
            tape.add(&x[4], &u[1])?,
        ];
        if self.with_obstacle {
            next.push(tape.sub(&x[5], &dx)?);
            next.push(tape.sub(&x[6], &dy)?);
        }
        Ok(next)
    }
}
