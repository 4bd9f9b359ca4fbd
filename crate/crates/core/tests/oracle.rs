use std::time::Instant;

use explicit_mpc::models::{
    gen_sine_reference, ActionBounds, Bicycle, ControlSequence, Dynamics, LinearSystem, QuadraticCost, ReferenceWindow,
    TrackingCost, TrackingWeights,
};
use explicit_mpc::oracle::{first_order_residual, lqr_closed_form, solve, value_and_grad, OracleProblem, OracleSettings};
use nalgebra::{DMatrix, DVector};

/// Minimizes the stacked quadratic directly: `x = T x0 + S u`, so
/// `V(u) = x' Qbar x + u' Rbar u` and `u* = -(S' Qbar S + Rbar)^-1 S' Qbar T x0`.
fn batch_least_squares(sys: &LinearSystem, cost: &QuadraticCost, n_steps: usize, x0: &[f64]) -> Vec<f64> {
    let (n, m) = (sys.n, sys.m);
    let a = DMatrix::from_row_slice(n, n, &sys.a);
    let b = DMatrix::from_row_slice(n, m, &sys.b);
    let mut t = DMatrix::zeros(n * n_steps, n);
    let mut s = DMatrix::zeros(n * n_steps, m * n_steps);
    let mut pow = DMatrix::identity(n, n);
    let mut powers = vec![pow.clone()];
    for _ in 0..n_steps {
        pow = &a * &pow;
        powers.push(pow.clone());
    }
    for i in 0..n_steps {
        t.view_mut((i * n, 0), (n, n)).copy_from(&powers[i]);
        for j in 0..i {
            let blk = &powers[i - 1 - j] * &b;
            s.view_mut((i * n, j * m), (n, m)).copy_from(&blk);
        }
    }
    let q = DMatrix::from_row_slice(n, n, &cost.q);
    let r = DMatrix::from_row_slice(m, m, &cost.r);
    let mut qbar = DMatrix::zeros(n * n_steps, n * n_steps);
    let mut rbar = DMatrix::zeros(m * n_steps, m * n_steps);
    for i in 0..n_steps {
        qbar.view_mut((i * n, i * n), (n, n)).copy_from(&q);
        rbar.view_mut((i * m, i * m), (m, m)).copy_from(&r);
    }
    let h = s.transpose() * &qbar * &s + rbar;
    let rhs = -(s.transpose() * &qbar * &t * DVector::from_column_slice(x0));
    h.lu().solve(&rhs).unwrap().iter().copied().collect()
}

fn wide_bounds() -> ActionBounds<f64> {
    ActionBounds::new(vec![-100.0], vec![100.0]).unwrap()
}

#[test]
fn riccati_matches_batch_least_squares() {
    let sys = LinearSystem::double_integrator(0.1);
    let cost = QuadraticCost::identity(2, 1);
    for x0 in [[1.0, 0.0], [-0.3, 2.0], [5.0, -1.0]] {
        for n in [1, 3, 10] {
            let riccati = lqr_closed_form(&sys, &cost, n, &x0).unwrap();
            let direct = batch_least_squares(&sys, &cost, n, &x0);
            for (a, b) in riccati.data().iter().zip(&direct) {
                assert!((a - b).abs() < 1e-10, "n={n}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn riccati_trivial_cases() {
    let sys = LinearSystem::double_integrator(0.1);
    let zero_q = QuadraticCost::new(2, 1, vec![0.0; 4], vec![1.0]).unwrap();
    assert!(lqr_closed_form(&sys, &zero_q, 5, &[1.0, 2.0]).unwrap().data().iter().all(|&u| u == 0.0));
    let cost = QuadraticCost::identity(2, 1);
    assert!(lqr_closed_form(&sys, &cost, 5, &[0.0, 0.0]).unwrap().data().iter().all(|&u| u == 0.0));
    let singular = QuadraticCost::new(2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0]).unwrap();
    assert!(lqr_closed_form(&sys, &singular, 5, &[1.0, 2.0]).is_err());
}

#[test]
fn one_step_minimizer_by_hand() {
    // N = 1: only u_0 enters, through u_0^2, so the minimizer is 0 regardless of x0.
    // N = 2, dt = 1: V = |x0|^2 + u0^2 + |A x0 + B u0|^2 + u1^2 with x0 = (1, 0):
    // A x0 + B u0 = (1 + u0/2, u0), so dV/du0 = 2u0 + (1 + u0/2) + 2u0 = 0 -> u0 = -2/9.
    let sys = LinearSystem::double_integrator(1.0);
    let cost = QuadraticCost::identity(2, 1);
    let p = OracleProblem::new(&sys, &cost, vec![1.0, 0.0], ReferenceWindow::zeros(1), wide_bounds());
    let sol = solve(&p).unwrap();
    assert!(sol.converged);
    assert!(sol.u.data()[0].abs() < 1e-9);
    let p = OracleProblem::new(&sys, &cost, vec![1.0, 0.0], ReferenceWindow::zeros(2), wide_bounds());
    let sol = solve(&p).unwrap();
    assert!((sol.u.data()[0] + 2.0 / 9.0).abs() < 1e-9);
    assert!(sol.u.data()[1].abs() < 1e-9);
}

#[test]
fn solver_matches_riccati_at_n10() {
    let sys = LinearSystem::double_integrator(0.1);
    let cost = QuadraticCost::identity(2, 1);
    let x0 = vec![1.0, -0.5];
    let p = OracleProblem::new(&sys, &cost, x0.clone(), ReferenceWindow::zeros(10), wide_bounds());
    let sol = solve(&p).unwrap();
    let exact = lqr_closed_form(&sys, &cost, 10, &x0).unwrap();
    assert!(sol.converged, "residual {}", sol.residual);
    assert!(sol.residual < 1e-8);
    for (a, b) in sol.u.data().iter().zip(exact.data()) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(first_order_residual(&p, &sol.u).unwrap() < 1e-8);
}

#[test]
fn active_bounds_are_clipped() {
    let sys = LinearSystem::double_integrator(0.1);
    let cost = QuadraticCost::identity(2, 1);
    let x0 = vec![10.0, 5.0];
    let tight = ActionBounds::new(vec![-0.5], vec![0.5]).unwrap();
    let p = OracleProblem::new(&sys, &cost, x0, ReferenceWindow::zeros(10), tight.clone());
    let sol = solve(&p).unwrap();
    assert!(sol.converged);
    assert!(sol.residual < 1e-8);
    assert!(tight.contains(sol.u.data()));
    assert_eq!(sol.u.data()[0], -0.5);
}

#[test]
fn residual_positive_away_from_optimum() {
    let sys = LinearSystem::double_integrator(0.1);
    let cost = QuadraticCost::identity(2, 1);
    let p = OracleProblem::new(&sys, &cost, vec![1.0, 1.0], ReferenceWindow::zeros(4), wide_bounds());
    assert!(first_order_residual(&p, &ControlSequence::zeros(4, 1)).unwrap() > 0.0);
}

#[test]
fn bicycle_tracking_converges() {
    let model = Bicycle::default();
    let cost = TrackingCost::new(TrackingWeights::default(), Dynamics::<f64>::layout(&model).unwrap());
    let refs = gen_sine_reference(7, 20, 5.0).unwrap();
    let p = OracleProblem::new(&model, &cost, vec![3.5, 1.2, 0.1, 4.4, 0.0, 0.0], refs, ActionBounds::vehicle());
    let start = Instant::now();
    let sol = solve(&p).unwrap();
    eprintln!(
        "bicycle N=20: cost {} residual {:e} iterations {} in {:?}",
        sol.cost,
        sol.residual,
        sol.iterations,
        start.elapsed()
    );
    assert!(sol.converged);
    assert!(ActionBounds::vehicle().contains(sol.u.data()));
    let (v, _) = value_and_grad(&p, sol.u.data()).unwrap();
    assert_eq!(v, sol.cost);
}

#[test]
fn settings_deserialize_with_defaults() {
    let s: OracleSettings = serde_json::from_str(r#"{"restarts": 2}"#).unwrap();
    assert_eq!(s.restarts, 2);
    assert_eq!(s.tol, 1e-8);
    assert!(serde_json::from_str::<OracleSettings>(r#"{"restart": 2}"#).is_err());
}
