use serde::{Deserialize, Serialize};

use super::{RunningCost, StateLayout};
use crate::autodiff::{Tape, Tensor};
use crate::error::Result;
use crate::scalar::{wrap_angle, Real};

/// Coefficients of the tracking cost
/// `w_px ex^2 + w_py ey^2 + w_phi ephi^2 + w_v_err ev^2 + w_v v^2 + w_omega omega^2 + w_u0 u0^2 + w_u1 u1^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingWeights {
    pub px: f64,
    pub py: f64,
    pub phi: f64,
    pub v_err: f64,
    pub v: f64,
    pub omega: f64,
    pub u0: f64,
    pub u1: f64,
}

impl Default for TrackingWeights {
    fn default() -> Self {
        Self {
            px: 0.2,
            py: 0.3,
            phi: 0.2,
            v_err: 0.3,
            v: 0.1,
            omega: 0.1,
            u0: 0.05,
            u1: 0.05,
        }
    }
}

/// How the clearance `l_c` enters the running cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstaclePenalty {
    /// `l = l_track - w l_c^2`, applied unconditionally.
    #[default]
    AsWritten,
    /// `l = l_track + w max(0, -l_c)^2`.
    Clipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub tracking: TrackingWeights,
    pub r_ego: f64,
    pub r_obstacle: f64,
    pub r_safe: f64,
    pub collision_weight: f64,
    pub penalty: ObstaclePenalty,
    /// The clipped penalty is active for `l_c < penalty_margin`.
    #[serde(default)]
    pub penalty_margin: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            tracking: TrackingWeights::default(),
            r_ego: 0.4765,
            r_obstacle: 0.2,
            r_safe: 0.1,
            collision_weight: 1.0,
            penalty: ObstaclePenalty::AsWritten,
            penalty_margin: 0.0,
        }
    }
}

impl CostWeights {
    pub fn clearance_radius(&self) -> f64 {
        self.r_ego + self.r_obstacle + self.r_safe
    }

    /// `l_c = |offset| - (r_ego + r_obstacle + r_safe)`.
    pub fn clearance<T: Real>(&self, dx: T, dy: T) -> T {
        (dx * dx + dy * dy).sqrt() - T::lit(self.clearance_radius())
    }
}

pub fn running_cost_track<T: Real>(x: &[T], r: &[T], u: &[T], w: &TrackingWeights, layout: &StateLayout) -> T {
    let sq = |v: T| v * v;
    let ex = x[layout.px] - r[0];
    let ey = x[layout.py] - r[1];
    let ephi = wrap_angle(x[layout.phi] - r[2]);
    let ev = x[layout.v] - r[3];
    T::lit(w.px) * sq(ex)
        + T::lit(w.py) * sq(ey)
        + T::lit(w.phi) * sq(ephi)
        + T::lit(w.v_err) * sq(ev)
        + T::lit(w.v) * sq(x[layout.v])
        + T::lit(w.omega) * sq(x[layout.omega])
        + T::lit(w.u0) * sq(u[0])
        + T::lit(w.u1) * sq(u[1])
}

pub fn running_cost_avoid<T: Real>(x: &[T], r: &[T], u: &[T], w: &CostWeights, layout: &StateLayout) -> T {
    let track = running_cost_track(x, r, u, &w.tracking, layout);
    let Some((ix, iy)) = layout.obstacle else {
        return track;
    };
    let lc = w.clearance(x[ix], x[iy]);
    let k = T::lit(w.collision_weight);
    match w.penalty {
        ObstaclePenalty::AsWritten => track - k * lc * lc,
        ObstaclePenalty::Clipped => {
            let pen = (T::lit(w.penalty_margin) - lc).max(T::zero());
            track + k * pen * pen
        }
    }
}

/// Tracking cost over a plant's [`StateLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingCost {
    pub weights: TrackingWeights,
    pub layout: StateLayout,
}

impl TrackingCost {
    pub fn new(weights: TrackingWeights, layout: StateLayout) -> Self {
        Self { weights, layout }
    }
}

fn weighted_square<T: Real>(tape: &mut Tape<T>, v: &Tensor<T>, w: f64) -> Result<Tensor<T>> {
    let s = tape.square(v)?;
    tape.scale(&s, T::lit(w))
}

fn track_tape<T: Real>(
    tape: &mut Tape<T>,
    w: &TrackingWeights,
    layout: &StateLayout,
    x: &[Tensor<T>],
    r: &[Tensor<T>],
    u: &[Tensor<T>],
) -> Result<Tensor<T>> {
    let ex = tape.sub(&x[layout.px], &r[0])?;
    let ey = tape.sub(&x[layout.py], &r[1])?;
    let ephi = tape.sub(&x[layout.phi], &r[2])?;
    let ephi = tape.wrap_angle(&ephi)?;
    let ev = tape.sub(&x[layout.v], &r[3])?;
    let terms = [
        weighted_square(tape, &ex, w.px)?,
        weighted_square(tape, &ey, w.py)?,
        weighted_square(tape, &ephi, w.phi)?,
        weighted_square(tape, &ev, w.v_err)?,
        weighted_square(tape, &x[layout.v], w.v)?,
        weighted_square(tape, &x[layout.omega], w.omega)?,
        weighted_square(tape, &u[0], w.u0)?,
        weighted_square(tape, &u[1], w.u1)?,
    ];
    let mut total = terms[0].clone();
    for t in &terms[1..] {
        total = tape.add(&total, t)?;
    }
    Ok(total)
}

impl<T: Real> RunningCost<T> for TrackingCost {
    fn eval(&self, x: &[T], r: &[T], u: &[T]) -> T {
        running_cost_track(x, r, u, &self.weights, &self.layout)
    }

    fn eval_tape(&self, tape: &mut Tape<T>, x: &[Tensor<T>], r: &[Tensor<T>], u: &[Tensor<T>]) -> Result<Tensor<T>> {
        track_tape(tape, &self.weights, &self.layout, x, r, u)
    }
}

/// Tracking plus obstacle clearance term.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleCost {
    pub weights: CostWeights,
    pub layout: StateLayout,
}

impl ObstacleCost {
    pub fn new(weights: CostWeights, layout: StateLayout) -> Self {
        Self { weights, layout }
    }
}

impl<T: Real> RunningCost<T> for ObstacleCost {
    fn eval(&self, x: &[T], r: &[T], u: &[T]) -> T {
        running_cost_avoid(x, r, u, &self.weights, &self.layout)
    }

    fn eval_tape(&self, tape: &mut Tape<T>, x: &[Tensor<T>], r: &[Tensor<T>], u: &[Tensor<T>]) -> Result<Tensor<T>> {
        let track = track_tape(tape, &self.weights.tracking, &self.layout, x, r, u)?;
        let Some((ix, iy)) = self.layout.obstacle else {
            return Ok(track);
        };
        let dx2 = tape.square(&x[ix])?;
        let dy2 = tape.square(&x[iy])?;
        let d2 = tape.add(&dx2, &dy2)?;
        let dist = tape.sqrt(&d2)?;
        let lc = tape.shift(&dist, T::lit(-self.weights.clearance_radius()))?;
        let k = self.weights.collision_weight;
        match self.weights.penalty {
            ObstaclePenalty::AsWritten => {
                let pen = weighted_square(tape, &lc, k)?;
                tape.sub(&track, &pen)
            }
            ObstaclePenalty::Clipped => {
                let neg = tape.affine(&lc, -T::one(), T::lit(self.weights.penalty_margin))?;
                let inside = tape.relu(&neg)?;
                let pen = weighted_square(tape, &inside, k)?;
                tape.add(&track, &pen)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VEHICLE: StateLayout = StateLayout {
        px: 0,
        py: 1,
        phi: 2,
        v: 3,
        omega: 5,
        obstacle: None,
    };

    const ROBOT: StateLayout = StateLayout {
        px: 0,
        py: 1,
        phi: 2,
        v: 3,
        omega: 4,
        obstacle: Some((5, 6)),
    };

    #[test]
    fn zero_at_reference() {
        let x = [1.0, 2.0, 0.3, 0.0, 0.0, 0.0];
        let r = [1.0, 2.0, 0.3, 0.0];
        assert_eq!(running_cost_track(&x, &r, &[0.0, 0.0], &TrackingWeights::default(), &VEHICLE), 0.0);
    }

    #[test]
    fn lateral_and_effort_coefficients() {
        let w = TrackingWeights::default();
        let x: [f64; 6] = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert!((running_cost_track(&x, &[0.0; 4], &[0.0, 0.0], &w, &VEHICLE) - 0.3).abs() < 1e-15);
        let x = [0.0f64; 6];
        assert!((running_cost_track(&x, &[0.0; 4], &[2.0, 0.0], &w, &VEHICLE) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn heading_error_is_wrapped() {
        let w = TrackingWeights::default();
        let x = [0.0, 0.0, 3.1, 0.0, 0.0, 0.0];
        let r = [0.0, 0.0, -3.1, 0.0];
        let e = 2.0 * std::f64::consts::PI - 6.2;
        assert!((running_cost_track(&x, &r, &[0.0, 0.0], &w, &VEHICLE) - 0.2 * e * e).abs() < 1e-12);
    }

    fn robot_at_distance(d: f64) -> [f64; 7] {
        [0.0, 0.0, 0.0, 0.2, 0.05, d * 0.6, d * 0.8]
    }

    #[test]
    fn obstacle_terms() {
        let w = CostWeights::default();
        let r = [0.1, 0.0, 0.0, 0.4];
        let u = [0.01, 0.0];
        let on_boundary = robot_at_distance(w.clearance_radius());
        let track = running_cost_track(&on_boundary, &r, &u, &w.tracking, &ROBOT);
        assert!((running_cost_avoid(&on_boundary, &r, &u, &w, &ROBOT) - track).abs() < 1e-15);

        let far = robot_at_distance(w.clearance_radius() + 1.0);
        let track = running_cost_track(&far, &r, &u, &w.tracking, &ROBOT);
        assert!((running_cost_avoid(&far, &r, &u, &w, &ROBOT) - (track - 1.0)).abs() < 1e-12);

        let clipped = CostWeights {
            penalty: ObstaclePenalty::Clipped,
            ..w
        };
        assert_eq!(running_cost_avoid(&far, &r, &u, &clipped, &ROBOT), track);
        let near = robot_at_distance(w.clearance_radius() - 0.5);
        let track = running_cost_track(&near, &r, &u, &w.tracking, &ROBOT);
        assert!((running_cost_avoid(&near, &r, &u, &clipped, &ROBOT) - (track + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn tape_matches_plain() {
        for penalty in [ObstaclePenalty::AsWritten, ObstaclePenalty::Clipped] {
            let cost = ObstacleCost::new(
                CostWeights {
                    penalty,
                    ..Default::default()
                },
                ROBOT,
            );
            let x = [0.3, -0.2, 0.7, 0.35, 0.1, 0.5, -0.3];
            let mut cost = cost;
            cost.weights.penalty_margin = 0.4;
            let r = [0.5, 0.1, 0.2, 0.4];
            let u = [0.02, -0.01];
            let plain = RunningCost::<f64>::eval(&cost, &x, &r, &u);
            let col = |v: &[f64]| -> Vec<Tensor<f64>> { v.iter().map(|&a| Tensor::new(&[1, 1], vec![a]).unwrap()).collect() };
            let mut tape = Tape::new();
            let taped = cost.eval_tape(&mut tape, &col(&x), &col(&r), &col(&u)).unwrap();
            assert!((plain - taped.data()[0]).abs() < 1e-14);
        }
    }
}
