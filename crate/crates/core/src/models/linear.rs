//! Linear dynamics and quadratic cost, used to validate the optimizer
//! against the Riccati solution.

use super::{Dynamics, RunningCost, StateLayout};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `x+ = A x + B u`, matrices row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    pub n: usize,
    pub m: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LinearSystem {
    pub fn new(n: usize, m: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != n * n || b.len() != n * m {
            return Err(Error::ShapeMismatch {
                op: "linear_system",
                left: vec![a.len(), b.len()],
                right: vec![n * n, n * m],
            });
        }
        Ok(Self { n, m, a, b })
    }

    /// Position/velocity double integrator with force input.
    pub fn double_integrator(dt: f64) -> Self {
        Self {
            n: 2,
            m: 1,
            a: vec![1.0, dt, 0.0, 1.0],
            b: vec![0.5 * dt * dt, dt],
        }
    }
}

/// Linear combination `sum_j c_j t_j` of columns, skipping zero coefficients.
fn combine<T: Real>(tape: &mut Tape<T>, coeffs: &[f64], terms: &[Tensor<T>], like: &Tensor<T>) -> Result<Tensor<T>> {
    let mut acc: Option<Tensor<T>> = None;
    for (&c, t) in coeffs.iter().zip(terms) {
        if c == 0.0 {
            continue;
        }
        let s = tape.scale(t, T::lit(c))?;
        acc = Some(match acc {
            Some(a) => tape.add(&a, &s)?,
            None => s,
        });
    }
    Ok(acc.unwrap_or_else(|| Tensor::zeros(like.shape())))
}

impl<T: Real> Dynamics<T> for LinearSystem {
    fn n_state(&self) -> usize {
        self.n
    }

    fn n_input(&self) -> usize {
        self.m
    }

    fn layout(&self) -> Option<StateLayout> {
        None
    }

    fn step(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        Ok((0..self.n)
            .map(|i| {
                let ax = (0..self.n).fold(T::zero(), |s, j| s + T::lit(self.a[i * self.n + j]) * x[j]);
                (0..self.m).fold(ax, |s, k| s + T::lit(self.b[i * self.m + k]) * u[k])
            })
            .collect())
    }

    fn step_tape(&self, tape: &mut Tape<T>, x: &[Tensor<T>], u: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        (0..self.n)
            .map(|i| {
                let ax = combine(tape, &self.a[i * self.n..(i + 1) * self.n], x, &x[0])?;
                let bu = combine(tape, &self.b[i * self.m..(i + 1) * self.m], u, &x[0])?;
                tape.add(&ax, &bu)
            })
            .collect()
    }
}

/// `l = x' Q x + u' R u`; the reference is ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub n: usize,
    pub m: usize,
}

impl QuadraticCost {
    pub fn new(n: usize, m: usize, q: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        if q.len() != n * n || r.len() != m * m {
            return Err(Error::ShapeMismatch {
                op: "quadratic_cost",
                left: vec![q.len(), r.len()],
                right: vec![n * n, m * m],
            });
        }
        Ok(Self { q, r, n, m })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        let eye = |k: usize| (0..k * k).map(|i| if i % (k + 1) == 0 { 1.0 } else { 0.0 }).collect();
        Self {
            q: eye(n),
            r: eye(m),
            n,
            m,
        }
    }
}

fn quad_form<T: Real>(w: &[f64], v: &[T]) -> T {
    let k = v.len();
    let mut s = T::zero();
    for i in 0..k {
        for j in 0..k {
            s = s + T::lit(w[i * k + j]) * v[i] * v[j];
        }
    }
    s
}

fn quad_form_tape<T: Real>(tape: &mut Tape<T>, w: &[f64], v: &[Tensor<T>]) -> Result<Option<Tensor<T>>> {
    let k = v.len();
    let mut acc: Option<Tensor<T>> = None;
    for i in 0..k {
        for j in 0..k {
            let c = w[i * k + j];
            if c == 0.0 {
                continue;
            }
            let p = tape.mul(&v[i], &v[j])?;
            let p = tape.scale(&p, T::lit(c))?;
            acc = Some(match acc {
                Some(a) => tape.add(&a, &p)?,
                None => p,
            });
        }
    }
    Ok(acc)
}

impl<T: Real> RunningCost<T> for QuadraticCost {
    fn eval(&self, x: &[T], _r: &[T], u: &[T]) -> T {
        quad_form(&self.q, &x[..self.n]) + quad_form(&self.r, &u[..self.m])
    }

    fn eval_tape(&self, tape: &mut Tape<T>, x: &[Tensor<T>], _r: &[Tensor<T>], u: &[Tensor<T>]) -> Result<Tensor<T>> {
        let qx = quad_form_tape(tape, &self.q, &x[..self.n])?;
        let ru = quad_form_tape(tape, &self.r, &u[..self.m])?;
        match (qx, ru) {
            (Some(a), Some(b)) => tape.add(&a, &b),
            (Some(a), None) | (None, Some(a)) => Ok(a),
            (None, None) => Ok(Tensor::zeros(x[0].shape())),
        }
    }
}
