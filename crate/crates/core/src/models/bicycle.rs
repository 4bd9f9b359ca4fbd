//! Dynamic bicycle model with a linear tire model, discretized implicitly in
//! the lateral velocity and yaw rate so it stays stable at low speed.

use serde::{Deserialize, Serialize};

use super::{Dynamics, StateLayout};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState<T> {
    pub p_x: T,
    pub p_y: T,
    pub phi: T,
    pub v: T,
    pub v_lat: T,
    pub omega: T,
}

impl<T: Real> VehicleState<T> {
    pub fn to_vec(&self) -> Vec<T> {
        vec![self.p_x, self.p_y, self.phi, self.v, self.v_lat, self.omega]
    }

    pub fn from_slice(x: &[T]) -> Self {
        Self {
            p_x: x[0],
            p_y: x[1],
            phi: x[2],
            v: x[3],
            v_lat: x[4],
            omega: x[5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleInput<T> {
    pub a_x: T,
    pub delta: T,
}

/// Vehicle constants. Cornering stiffnesses are negative by convention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BicycleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub l_front: f64,
    pub l_rear: f64,
    pub k_front: f64,
    pub k_rear: f64,
    /// Speed floor applied inside the lateral update denominators.
    pub v_floor: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self {
            mass: 1412.0,
            yaw_inertia: 1536.7,
            l_front: 1.06,
            l_rear: 1.85,
            k_front: -128_916.0,
            k_rear: -85_944.0,
            v_floor: 0.1,
        }
    }
}

/// Precomputed coefficients of the discrete update for a fixed `dt`.
#[derive(Clone, Copy, Debug)]
struct Coeffs<T> {
    dt: T,
    m: T,
    iz: T,
    v_floor: T,
    // dt (lf kf - lr kr)
    coupling: T,
    // -dt kf
    steer_lat: T,
    // -dt m
    centripetal: T,
    // -dt (kf + kr)
    lat_den: T,
    // -dt lf kf
    steer_yaw: T,
    // -dt (lf^2 kf + lr^2 kr)
    yaw_den: T,
}

impl<T: Real> Coeffs<T> {
    fn new(p: &BicycleParams, dt: f64) -> Self {
        let (lf, lr, kf, kr) = (p.l_front, p.l_rear, p.k_front, p.k_rear);
        Self {
            dt: T::lit(dt),
            m: T::lit(p.mass),
            iz: T::lit(p.yaw_inertia),
            v_floor: T::lit(p.v_floor),
            coupling: T::lit(dt * (lf * kf - lr * kr)),
            steer_lat: T::lit(-dt * kf),
            centripetal: T::lit(-dt * p.mass),
            lat_den: T::lit(-dt * (kf + kr)),
            steer_yaw: T::lit(-dt * lf * kf),
            yaw_den: T::lit(-dt * (lf * lf * kf + lr * lr * kr)),
        }
    }
}

/// One discrete step of the bicycle model.
pub fn bicycle_step<T: Real>(
    s: &VehicleState<T>,
    u: &VehicleInput<T>,
    dt: f64,
    params: &BicycleParams,
) -> Result<VehicleState<T>> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let c = Coeffs::<T>::new(params, dt);
    let (sin, cos) = s.phi.sin_cos();
    let vg = s.v.max(c.v_floor);
    let lat_num = c.m * vg * s.v_lat + c.coupling * s.omega + c.steer_lat * u.delta * vg + c.centripetal * vg * vg * s.omega;
    let yaw_num = c.iz * vg * s.omega + c.coupling * s.v_lat + c.steer_yaw * u.delta * vg;
    let next = VehicleState {
        p_x: s.p_x + c.dt * (s.v * cos - s.v_lat * sin),
        p_y: s.p_y + c.dt * (s.v * sin + s.v_lat * cos),
        phi: s.phi + c.dt * s.omega,
        v: s.v + c.dt * u.a_x,
        v_lat: lat_num / (c.m * vg + c.lat_den),
        omega: yaw_num / (c.iz * vg + c.yaw_den),
    };
    if next.to_vec().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "bicycle_step" });
    }
    Ok(next)
}

/// Bicycle plant with state `(p_x, p_y, phi, v, v_lat, omega)` and input `(a_x, delta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bicycle {
    pub params: BicycleParams,
    pub dt: f64,
}

impl Default for Bicycle {
    fn default() -> Self {
        Self {
            params: BicycleParams::default(),
            dt: super::DT,
        }
    }
}

impl<T: Real> Dynamics<T> for Bicycle {
    fn n_state(&self) -> usize {
        6
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
            omega: 5,
            obstacle: None,
        })
    }

    fn step(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        let s = VehicleState::from_slice(x);
        let input = VehicleInput { a_x: u[0], delta: u[1] };
        Ok(bicycle_step(&s, &input, self.dt, &self.params)?.to_vec())
    }

    fn step_tape(&self, tape: &mut Tape<T>, x: &[Tensor<T>], u: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let c = Coeffs::<T>::new(&self.params, self.dt);
        let (px, py, phi, v, vlat, omega) = (&x[0], &x[1], &x[2], &x[3], &x[4], &x[5]);
        let (ax, delta) = (&u[0], &u[1]);

        let cos = tape.cos(phi)?;
        let sin = tape.sin(phi)?;
        let v_cos = tape.mul(v, &cos)?;
        let lat_sin = tape.mul(vlat, &sin)?;
        let dx = tape.sub(&v_cos, &lat_sin)?;
        let dx = tape.scale(&dx, c.dt)?;
        let px_next = tape.add(px, &dx)?;
        let v_sin = tape.mul(v, &sin)?;
        let lat_cos = tape.mul(vlat, &cos)?;
        let dy = tape.add(&v_sin, &lat_cos)?;
        let dy = tape.scale(&dy, c.dt)?;
        let py_next = tape.add(py, &dy)?;
        let dphi = tape.scale(omega, c.dt)?;
        let phi_next = tape.add(phi, &dphi)?;
        let dv = tape.scale(ax, c.dt)?;
        let v_next = tape.add(v, &dv)?;

        // vg = max(v, floor)
        let over = tape.shift(v, -c.v_floor)?;
        let over = tape.relu(&over)?;
        let vg = tape.shift(&over, c.v_floor)?;

        let delta_vg = tape.mul(delta, &vg)?;

        let t1 = tape.mul(&vg, vlat)?;
        let t1 = tape.scale(&t1, c.m)?;
        let t2 = tape.scale(omega, c.coupling)?;
        let t3 = tape.scale(&delta_vg, c.steer_lat)?;
        let vg2 = tape.mul(&vg, &vg)?;
        let t4 = tape.mul(&vg2, omega)?;
        let t4 = tape.scale(&t4, c.centripetal)?;
        let num = tape.add(&t1, &t2)?;
        let num = tape.add(&num, &t3)?;
        let num = tape.add(&num, &t4)?;
        let den = tape.affine(&vg, c.m, c.lat_den)?;
        let vlat_next = tape.div(&num, &den)?;

        let w1 = tape.mul(&vg, omega)?;
        let w1 = tape.scale(&w1, c.iz)?;
        let w2 = tape.scale(vlat, c.coupling)?;
        let w3 = tape.scale(&delta_vg, c.steer_yaw)?;
        let num = tape.add(&w1, &w2)?;
        let num = tape.add(&num, &w3)?;
        let den = tape.affine(&vg, c.iz, c.yaw_den)?;
        let omega_next = tape.div(&num, &den)?;

        Ok(vec![px_next, py_next, phi_next, v_next, vlat_next, omega_next])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cruise() -> VehicleState<f64> {
        VehicleState {
            p_x: 0.0,
            p_y: 0.0,
            phi: 0.0,
            v: 5.0,
            v_lat: 0.0,
            omega: 0.0,
        }
    }

    #[test]
    fn straight_driving() {
        let s = bicycle_step(&cruise(), &VehicleInput { a_x: 0.0, delta: 0.0 }, 0.1, &BicycleParams::default()).unwrap();
        assert!((s.p_x - 0.5).abs() < 1e-15);
        assert_eq!((s.p_y, s.phi, s.v_lat, s.omega), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(s.v, 5.0);
    }

    #[test]
    fn pure_acceleration() {
        let s = bicycle_step(&cruise(), &VehicleInput { a_x: 3.0, delta: 0.0 }, 0.1, &BicycleParams::default()).unwrap();
        assert!((s.v - 5.3).abs() < 1e-12);
    }

    #[test]
    fn steering_step_matches_hand_evaluation() {
        // v_lat+ = -dt kf delta v / (m v - dt (kf + kr))
        //        = 0.1*128916*0.1*5 / (1412*5 + 0.1*214860) = 6445.8 / 28546
        // omega+ = -dt lf kf delta v / (Iz v - dt (lf^2 kf + lr^2 kr))
        //        = 0.1*1.06*128916*0.1*5 / (1536.7*5 + 0.1*(1.1236*128916 + 3.4225*85944))
        let s = bicycle_step(&cruise(), &VehicleInput { a_x: 0.0, delta: 0.1 }, 0.1, &BicycleParams::default()).unwrap();
        let v_lat = 6445.8 / 28546.0;
        let yaw_den = 7683.5 + 0.1 * (1.1236 * 128_916.0 + 3.4225 * 85_944.0);
        let omega = 6832.548 / yaw_den;
        assert!((s.v_lat - v_lat).abs() < 1e-12, "{} vs {v_lat}", s.v_lat);
        assert!((s.omega - omega).abs() < 1e-12, "{} vs {omega}", s.omega);
        assert!((v_lat - 0.225804).abs() < 1e-6 && (omega - 0.132458).abs() < 1e-6);
    }

    #[test]
    fn tape_matches_plain() {
        let model = Bicycle::default();
        let x = [1.0, -0.4, 0.3, 4.2, 0.15, -0.05];
        let u = [1.2, -0.2];
        let plain = Dynamics::<f64>::step(&model, &x, &u).unwrap();
        let mut tape = Tape::new();
        let xs: Vec<_> = x.iter().map(|&v| Tensor::new(&[1, 1], vec![v]).unwrap()).collect();
        let us: Vec<_> = u.iter().map(|&v| Tensor::new(&[1, 1], vec![v]).unwrap()).collect();
        let next = model.step_tape(&mut tape, &xs, &us).unwrap();
        for (a, b) in plain.iter().zip(&next) {
            assert!((a - b.data()[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn low_speed_uses_floor() {
        let mut s = cruise();
        s.v = 0.0;
        s.omega = 0.2;
        let next = bicycle_step(&s, &VehicleInput { a_x: 0.0, delta: 0.3 }, 0.1, &BicycleParams::default()).unwrap();
        assert!(next.to_vec().iter().all(|v| v.is_finite()));
        assert!(bicycle_step(&s, &VehicleInput { a_x: 0.0, delta: 0.0 }, 0.0, &BicycleParams::default()).is_err());
    }
}
