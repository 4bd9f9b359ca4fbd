use serde::{Deserialize, Serialize};

use crate::models::{Bicycle, DiffDrive, Dynamics, ReferenceWindow, StateLayout};
use crate::scalar::{wrap_angle, Real};

/// Normalized policy inputs.
///
/// State token: `v / v_nom - 1`, `omega`, the pass-through entries, and the
/// obstacle offset rotated into the body frame and divided by `pos_scale`.
/// Reference tokens: the reference position relative to `x_t` in the body
/// frame over `pos_scale`, the wrapped heading error, and `v^R / v_nom - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMap {
    pub layout: StateLayout,
    pub n_state: usize,
    pub v_nom: f64,
    pub pos_scale: f64,
    pub passthrough: Vec<usize>,
}

impl FeatureMap {
    pub const N_REF_FEATURES: usize = 4;

    pub fn vehicle() -> Self {
        let model = Bicycle::default();
        Self {
            layout: Dynamics::<f64>::layout(&model).expect("bicycle layout"),
            n_state: Dynamics::<f64>::n_state(&model),
            v_nom: 5.0,
            pos_scale: 5.0,
            passthrough: vec![4],
        }
    }

    pub fn robot() -> Self {
        let model = DiffDrive::default();
        Self {
            layout: Dynamics::<f64>::layout(&model).expect("robot layout"),
            n_state: Dynamics::<f64>::n_state(&model),
            v_nom: 0.4,
            pos_scale: 1.0,
            passthrough: Vec::new(),
        }
    }

    pub fn n_state_features(&self) -> usize {
        2 + self.passthrough.len() + if self.layout.obstacle.is_some() { 2 } else { 0 }
    }

    pub fn state_features<T: Real>(&self, x: &[T]) -> Vec<T> {
        let l = &self.layout;
        let mut f = Vec::with_capacity(self.n_state_features());
        f.push(x[l.v] / T::lit(self.v_nom) - T::one());
        f.push(x[l.omega]);
        f.extend(self.passthrough.iter().map(|&i| x[i]));
        if let Some((ix, iy)) = l.obstacle {
            let (bx, by) = self.to_body(x[l.phi], x[ix], x[iy]);
            f.push(bx);
            f.push(by);
        }
        f
    }

    /// `N x 4` features, row-major.
    pub fn ref_features<T: Real>(&self, x: &[T], refs: &ReferenceWindow<T>) -> Vec<T> {
        let l = &self.layout;
        let mut f = Vec::with_capacity(refs.len() * Self::N_REF_FEATURES);
        for r in refs.rows() {
            let (bx, by) = self.to_body(x[l.phi], r[0] - x[l.px], r[1] - x[l.py]);
            f.push(bx);
            f.push(by);
            f.push(wrap_angle(r[2] - x[l.phi]));
            f.push(r[3] / T::lit(self.v_nom) - T::one());
        }
        f
    }

    fn to_body<T: Real>(&self, phi: T, dx: T, dy: T) -> (T, T) {
        let (s, c) = phi.sin_cos();
        let k = T::lit(1.0 / self.pos_scale);
        ((c * dx + s * dy) * k, (c * dy - s * dx) * k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_features_are_translation_and_rotation_invariant() {
        let fm = FeatureMap::vehicle();
        let x = [0.0, 0.0, 0.0, 5.0, 0.1, 0.02];
        let refs = ReferenceWindow::new(vec![[1.0, 0.5, 0.1, 5.0], [2.0, 0.7, 0.2, 5.5]]).unwrap();
        let base = fm.ref_features(&x, &refs);

        let th = 0.8f64;
        let (s, c) = th.sin_cos();
        let (ox, oy) = (3.0, -7.0);
        let mv = |p: [f64; 4]| [ox + c * p[0] - s * p[1], oy + s * p[0] + c * p[1], p[2] + th, p[3]];
        let x2 = [ox, oy, th, 5.0, 0.1, 0.02];
        let refs2 = ReferenceWindow::new(refs.rows().iter().map(|&r| mv(r)).collect()).unwrap();
        let moved = fm.ref_features(&x2, &refs2);
        for (a, b) in base.iter().zip(&moved) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(fm.state_features(&x), fm.state_features(&x2));
    }

    #[test]
    fn robot_features_include_body_frame_obstacle() {
        let fm = FeatureMap::robot();
        assert_eq!(fm.n_state_features(), 4);
        // heading north, obstacle due north: straight ahead in the body frame
        let x = [0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.4, 0.0, 0.0, 2.0];
        let f = fm.state_features(&x);
        assert!((f[2] - 2.0).abs() < 1e-12 && f[3].abs() < 1e-12);
        assert_eq!(f[0], 0.0);
    }
}
