use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{OracleProblem, OracleSolution};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::models::{rollout, ActionBounds, ControlSequence};

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const ROUNDING_ULPS: f64 = 8.0;

/// Horizon cost and its gradient with respect to the flattened `N x m` sequence.
pub fn value_and_grad(p: &OracleProblem<'_>, u: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let ut = tape.leaf(&Tensor::matrix(p.horizon(), p.bounds.dim(), u.to_vec())?);
    let (_, v) = rollout(&mut tape, p.dynamics, p.cost, &p.x0, &p.refs, &ut)?;
    let grads = tape.backward(&v)?;
    Ok((v.item()?, grads.wrt(&ut).into_data()))
}

fn binding(u: f64, g: f64, lo: f64, hi: f64) -> bool {
    (u <= lo && g > 0.0) || (u >= hi && g < 0.0)
}

/// Gradient with the components that push outward at an active bound zeroed.
pub fn projected_gradient(u: &[f64], g: &[f64], bounds: &ActionBounds<f64>) -> Vec<f64> {
    let m = bounds.dim();
    u.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&ui, &gi))| {
            if binding(ui, gi, bounds.lo[i % m], bounds.hi[i % m]) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Euclidean norm of the projected gradient at `u`.
pub fn first_order_residual(p: &OracleProblem<'_>, u: &ControlSequence<f64>) -> Result<f64> {
    let (_, g) = value_and_grad(p, u.data())?;
    Ok(norm(&projected_gradient(u.data(), &g, &p.bounds)))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(u: &mut [f64], bounds: &ActionBounds<f64>) {
    let m = bounds.dim();
    for (i, v) in u.iter_mut().enumerate() {
        *v = v.clamp(bounds.lo[i % m], bounds.hi[i % m]);
    }
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
}

/// L-BFGS two-loop recursion restricted to the free coordinates.
fn lbfgs_direction(mem: &VecDeque<Pair>, pg: &[f64], free: &[bool]) -> Vec<f64> {
    let masked = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(&x, &f)| if f { x } else { 0.0 }).collect() };
    let mut q = masked(pg);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = mem.iter().map(|p| (masked(&p.s), masked(&p.y))).collect();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let sy = dot(s, y);
        if sy <= 0.0 {
            alphas.push(0.0);
            continue;
        }
        let a = dot(s, &q) / sy;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y)) = pairs.last() {
        let (sy, yy) = (dot(s, y), dot(y, y));
        if sy > 0.0 && yy > 0.0 {
            let gamma = sy / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y), a) in pairs.iter().zip(alphas.iter().rev()) {
        let sy = dot(s, y);
        if sy <= 0.0 {
            continue;
        }
        let b = dot(y, &q) / sy;
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

struct Run {
    u: Vec<f64>,
    cost: f64,
    residual: f64,
    iterations: usize,
}

fn solve_from(p: &OracleProblem<'_>, start: Vec<f64>) -> Result<Run> {
    let settings = &p.settings;
    let bounds = &p.bounds;
    let m = bounds.dim();
    let mut x = start;
    project(&mut x, bounds);
    let (mut f, mut g) = value_and_grad(p, &x)?;
    let mut mem: VecDeque<Pair> = VecDeque::with_capacity(settings.memory);
    let mut pg = projected_gradient(&x, &g, bounds);
    let mut residual = norm(&pg);
    let mut iterations = 0;
    while iterations < settings.max_iterations && residual >= settings.tol {
        iterations += 1;
        let free: Vec<bool> = x
            .iter()
            .zip(&g)
            .enumerate()
            .map(|(i, (&xi, &gi))| !binding(xi, gi, bounds.lo[i % m], bounds.hi[i % m]))
            .collect();
        let mut d = lbfgs_direction(&mem, &pg, &free);
        if !(dot(&d, &pg) < 0.0) {
            mem.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let mut alpha = if mem.is_empty() { (1.0 / residual).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            project(&mut xn, bounds);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if let Ok((fn_, gn)) = value_and_grad(p, &xn) {
                let armijo = fn_ <= f + ARMIJO * dot(&g, &step);
                // Near convergence the decrease drops below rounding of f; accept
                // steps within a few ulps that still shrink the residual.
                let slack = ROUNDING_ULPS * f64::EPSILON * f.abs().max(1.0);
                let stalled = fn_ <= f + slack && norm(&projected_gradient(&xn, &gn, bounds)) < residual;
                if armijo || stalled {
                    accepted = Some((xn, fn_, gn, step));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            break;
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * norm(&s) * norm(&y) {
            if mem.len() == settings.memory.max(1) {
                mem.pop_front();
            }
            mem.push_back(Pair { s, y });
        }
        x = xn;
        f = fn_;
        g = gn;
        pg = projected_gradient(&x, &g, bounds);
        residual = norm(&pg);
    }
    Ok(Run {
        u: x,
        cost: f,
        residual,
        iterations,
    })
}

/// Multi-start projected quasi-Newton solve; returns the lowest-cost run.
pub fn solve(p: &OracleProblem<'_>) -> Result<OracleSolution> {
    p.validate()?;
    let n = p.horizon();
    let m = p.bounds.dim();
    let mut starts = vec![vec![0.0; n * m]];
    if let Some(w) = &p.warm_start {
        starts.push(w.data().to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.settings.seed);
    for _ in 0..p.settings.restarts {
        starts.push(
            (0..n * m)
                .map(|i| rng.gen_range(p.bounds.lo[i % m]..p.bounds.hi[i % m]))
                .collect(),
        );
    }
    let mut best: Option<Run> = None;
    let mut last_err = None;
    for start in starts {
        match solve_from(p, start) {
            Ok(run) => {
                if best.as_ref().map_or(true, |b| run.cost < b.cost) {
                    best = Some(run);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some(run) = best else {
        return Err(Error::Solver(format!(
            "non-finite cost at every start ({})",
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )));
    };
    Ok(OracleSolution {
        converged: run.residual < p.settings.tol,
        u: ControlSequence::new(m, run.u)?,
        cost: run.cost,
        residual: run.residual,
        iterations: run.iterations,
    })
}

/// Independent solves in parallel.
pub fn solve_batch(problems: &[OracleProblem<'_>]) -> Vec<Result<OracleSolution>> {
    problems.par_iter().map(solve).collect()
}

/// Long-format CSV: `state_id,horizon,step,dim,u,cost,residual,iterations,converged`.
pub fn write_solutions_csv(path: &Path, rows: &[(usize, &OracleSolution)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["state_id", "horizon", "step", "dim", "u", "cost", "residual", "iterations", "converged"])?;
    for (id, sol) in rows {
        for step in 0..sol.u.horizon() {
            for (dim, v) in sol.u.row(step).iter().enumerate() {
                w.write_record([
                    id.to_string(),
                    sol.u.horizon().to_string(),
                    step.to_string(),
                    dim.to_string(),
                    v.to_string(),
                    sol.cost.to_string(),
                    sol.residual.to_string(),
                    sol.iterations.to_string(),
                    sol.converged.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
