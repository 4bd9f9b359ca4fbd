use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{ControlSequence, LinearSystem, QuadraticCost};

/// Exact minimizer of `sum_{i=0}^{N-1} x_i' Q x_i + u_i' R u_i` subject to
/// `x+ = A x + B u`, with no terminal weight, by backward Riccati recursion.
pub fn lqr_closed_form(sys: &LinearSystem, cost: &QuadraticCost, horizon: usize, x0: &[f64]) -> Result<ControlSequence<f64>> {
    if horizon == 0 {
        return Err(Error::EmptyHorizon);
    }
    let (n, m) = (sys.n, sys.m);
    if cost.n != n || cost.m != m || x0.len() != n {
        return Err(Error::ShapeMismatch {
            op: "lqr",
            left: vec![cost.n, cost.m, x0.len()],
            right: vec![n, m, n],
        });
    }
    let a = DMatrix::from_row_slice(n, n, &sys.a);
    let b = DMatrix::from_row_slice(n, m, &sys.b);
    let q = DMatrix::from_row_slice(n, n, &cost.q);
    let r = DMatrix::from_row_slice(m, m, &cost.r);
    if r.clone().cholesky().is_none() {
        return Err(Error::Singular("R is not positive definite"));
    }
    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut gains = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let bt_p = b.transpose() * &p;
        let s = &r + &bt_p * &b;
        let k = s
            .cholesky()
            .ok_or(Error::Singular("R + B'PB is not positive definite"))?
            .solve(&(&bt_p * &a));
        p = &q + a.transpose() * &p * (&a - &b * &k);
        p = (&p + p.transpose()) * 0.5;
        gains.push(k);
    }
    gains.reverse();
    let mut x = DVector::from_column_slice(x0);
    let mut u = Vec::with_capacity(horizon * m);
    for k in &gains {
        let ui = -(k * &x);
        u.extend(ui.iter());
        x = &a * &x + &b * &ui;
    }
    ControlSequence::new(m, u)
}
