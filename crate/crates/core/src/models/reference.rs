//! Reference paths and the time-indexed windows sampled along them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// `N` consecutive reference rows `(p_x^R, p_y^R, phi^R, v^R)` sampled at the control period.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceWindow<T> {
    rows: Vec<[T; 4]>,
}

impl<T: Real> ReferenceWindow<T> {
    pub fn new(rows: Vec<[T; 4]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyHorizon);
        }
        Ok(Self { rows })
    }

    /// All-zero window, for plants that ignore the reference.
    pub fn zeros(n: usize) -> Self {
        Self {
            rows: vec![[T::zero(); 4]; n.max(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T; 4] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[[T; 4]] {
        &self.rows
    }

    pub fn truncated(&self, n: usize) -> Self {
        Self {
            rows: self.rows[..n.min(self.rows.len())].to_vec(),
        }
    }

    pub fn cast<U: Real>(&self) -> ReferenceWindow<U> {
        ReferenceWindow {
            rows: self.rows.iter().map(|r| r.map(|v| U::lit(v.as_f64()))).collect(),
        }
    }
}

/// A path `y = g(x)` described by its lateral offset and slope.
pub trait Path: Send + Sync {
    /// `(y, dy/dx)` at longitudinal position `x`.
    fn lateral(&self, x: f64) -> (f64, f64);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinePath {
    pub amplitude: f64,
    pub wavelength: f64,
}

impl Default for SinePath {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            wavelength: 30.0,
        }
    }
}

impl Path for SinePath {
    fn lateral(&self, x: f64) -> (f64, f64) {
        let k = std::f64::consts::TAU / self.wavelength;
        (self.amplitude * (k * x).sin(), self.amplitude * k * (k * x).cos())
    }
}

/// Out-and-back lateral offset: straight until `start`, a ramp of length
/// `ramp` up to `offset`, a plateau of length `plateau`, and a ramp back.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleLaneChangePath {
    pub offset: f64,
    pub start: f64,
    pub ramp: f64,
    pub plateau: f64,
    /// Steepness of the normalized tanh ramp.
    pub sharpness: f64,
}

impl Default for DoubleLaneChangePath {
    fn default() -> Self {
        Self {
            offset: 1.0,
            start: 15.0,
            ramp: 10.0,
            plateau: 15.0,
            sharpness: 6.0,
        }
    }
}

impl DoubleLaneChangePath {
    /// Normalized ramp on `[0, 1]`: exactly 0 at 0 and 1 at 1.
    fn ramp_fn(&self, s: f64) -> (f64, f64) {
        let k = self.sharpness;
        let norm = (0.5 * k).tanh();
        let t = (k * (s - 0.5)).tanh();
        (0.5 * (1.0 + t / norm), 0.5 * k * (1.0 - t * t) / norm)
    }

    pub fn plateau_range(&self) -> (f64, f64) {
        let a = self.start + self.ramp;
        (a, a + self.plateau)
    }

    pub fn end(&self) -> f64 {
        self.start + 2.0 * self.ramp + self.plateau
    }
}

impl Path for DoubleLaneChangePath {
    fn lateral(&self, x: f64) -> (f64, f64) {
        let (p0, p1) = self.plateau_range();
        if x <= self.start || x >= self.end() {
            (0.0, 0.0)
        } else if x < p0 {
            let (r, dr) = self.ramp_fn((x - self.start) / self.ramp);
            (self.offset * r, self.offset * dr / self.ramp)
        } else if x <= p1 {
            (self.offset, 0.0)
        } else {
            let (r, dr) = self.ramp_fn((x - p1) / self.ramp);
            (self.offset * (1.0 - r), -self.offset * dr / self.ramp)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StraightPath {
    pub y: f64,
}

impl Path for StraightPath {
    fn lateral(&self, _x: f64) -> (f64, f64) {
        (self.y, 0.0)
    }
}

/// Window of `n` rows starting at step `t0`; the reference point moves along
/// `x` at `speed` and follows the path laterally.
pub fn gen_reference<T: Real>(path: &dyn Path, t0: usize, n: usize, speed: f64, dt: f64) -> Result<ReferenceWindow<T>> {
    if n == 0 {
        return Err(Error::EmptyHorizon);
    }
    let rows = (0..n)
        .map(|i| {
            let x = (t0 + i) as f64 * speed * dt;
            let (y, slope) = path.lateral(x);
            [T::lit(x), T::lit(y), T::lit(slope.atan()), T::lit(speed)]
        })
        .collect();
    ReferenceWindow::new(rows)
}

pub fn gen_sine_reference<T: Real>(t0: usize, n: usize, speed: f64) -> Result<ReferenceWindow<T>> {
    gen_reference(&SinePath::default(), t0, n, speed, super::DT)
}

pub fn gen_double_lane_change<T: Real>(t0: usize, n: usize, speed: f64) -> Result<ReferenceWindow<T>> {
    gen_reference(&DoubleLaneChangePath::default(), t0, n, speed, super::DT)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_origin() {
        let w = gen_sine_reference::<f64>(0, 1, 5.0).unwrap();
        let expect = (std::f64::consts::TAU / 30.0).atan();
        assert_eq!(w.row(0)[..2], [0.0, 0.0]);
        assert!((w.row(0)[2] - expect).abs() < 1e-15);
        assert_eq!(w.row(0)[3], 5.0);
    }

    #[test]
    fn sine_crest() {
        // lambda / 4 = 7.5 m = 15 steps at 0.5 m per step.
        let w = gen_sine_reference::<f64>(15, 3, 5.0).unwrap();
        assert!((w.row(0)[0] - 7.5).abs() < 1e-12);
        assert!((w.row(0)[1] - 1.0).abs() < 1e-12);
        assert!(w.row(0)[2].abs() < 1e-12);
        assert!(w.rows().iter().all(|r| r[3] == 5.0));
    }

    #[test]
    fn rows_advance_by_speed_dt() {
        let w = gen_sine_reference::<f64>(4, 5, 5.0).unwrap();
        for i in 1..5 {
            assert!((w.row(i)[0] - w.row(i - 1)[0] - 0.5).abs() < 1e-12);
        }
        assert!(gen_sine_reference::<f64>(0, 0, 5.0).is_err());
    }

    #[test]
    fn double_lane_change_profile() {
        let path = DoubleLaneChangePath::default();
        // before: x = 5 m, plateau middle: 32.5 m, after: 60 m
        let before = gen_double_lane_change::<f64>(10, 1, 5.0).unwrap();
        assert_eq!(before.row(0)[1], 0.0);
        let mid = gen_double_lane_change::<f64>(65, 1, 5.0).unwrap();
        assert_eq!(mid.row(0)[1], path.offset);
        assert_eq!(mid.row(0)[2], 0.0);
        let after = gen_double_lane_change::<f64>(120, 1, 5.0).unwrap();
        assert_eq!(after.row(0)[1], 0.0);
    }

    #[test]
    fn double_lane_change_is_continuous_with_consistent_slope() {
        let path = DoubleLaneChangePath::default();
        let h = 1e-6;
        let mut x = 0.0;
        while x < 70.0 {
            let (y0, s0) = path.lateral(x);
            let (y1, _) = path.lateral(x + h);
            assert!((y1 - y0).abs() < 1e-5);
            // central difference away from the joints
            let near_joint = [15.0, 25.0, 40.0, 50.0].iter().any(|j| (x - j).abs() < 1e-3);
            if !near_joint {
                let (ym, _) = path.lateral(x - h);
                assert!(((y1 - ym) / (2.0 * h) - s0).abs() < 1e-6, "slope mismatch at {x}");
            }
            x += 0.37;
        }
    }
}
