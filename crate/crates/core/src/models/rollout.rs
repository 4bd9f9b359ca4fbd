use super::{constant_columns, columns, Dynamics, ReferenceWindow, RunningCost};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Result of a batched rollout.
#[derive(Clone, Debug)]
pub struct RolloutOutput<T> {
    /// `B x 1` horizon cost per sample, recorded on the tape.
    pub costs: Tensor<T>,
    /// Per sample, the `N + 1` visited states (values only).
    pub trajectories: Vec<Vec<Vec<T>>>,
    /// Per sample, the `N` running-cost values.
    pub stage_costs: Vec<Vec<T>>,
}

/// Rolls `B` initial states forward under their control sequences and sums the
/// running cost `l(x_{t+i}, x^R_{t+i}, u_{t+i})` for `i = 0..N-1`.
///
/// `controls` is `(B * N) x n_input`, sample-major: row `b * N + i` is the
/// `i`-th input of sample `b`. The initial states enter as constants, so their
/// gradient is zero.
pub fn rollout_batch<T: Real>(
    tape: &mut Tape<T>,
    dynamics: &dyn Dynamics<T>,
    cost: &dyn RunningCost<T>,
    x0: &[Vec<T>],
    refs: &[ReferenceWindow<T>],
    controls: &Tensor<T>,
) -> Result<RolloutOutput<T>> {
    let batch = x0.len();
    if batch == 0 || refs.len() != batch {
        return Err(Error::ShapeMismatch {
            op: "rollout",
            left: vec![batch],
            right: vec![refs.len()],
        });
    }
    let horizon = refs[0].len();
    if horizon == 0 {
        return Err(Error::EmptyHorizon);
    }
    if refs.iter().any(|r| r.len() != horizon) {
        return Err(Error::Config("reference windows in a batch must share one horizon".into()));
    }
    let n_state = dynamics.n_state();
    let n_input = dynamics.n_input();
    if controls.shape() != [batch * horizon, n_input] {
        return Err(Error::ShapeMismatch {
            op: "rollout",
            left: controls.shape().to_vec(),
            right: vec![batch * horizon, n_input],
        });
    }
    if x0.iter().any(|x| x.len() != n_state) {
        return Err(Error::InvalidShape {
            shape: vec![n_state],
            reason: "initial state has the wrong dimension".into(),
        });
    }

    let rows: Vec<&[T]> = x0.iter().map(Vec::as_slice).collect();
    let mut state = constant_columns(&rows, n_state)?;
    let mut trajectories: Vec<Vec<Vec<T>>> = x0.iter().map(|x| vec![x.clone()]).collect();
    let mut stage_costs = vec![Vec::with_capacity(horizon); batch];
    let mut total: Option<Tensor<T>> = None;
    for i in 0..horizon {
        let ref_rows: Vec<&[T]> = refs.iter().map(|r| &r.row(i)[..]).collect();
        let r = constant_columns(&ref_rows, 4)?;
        let u_rows = if batch == 1 && horizon == 1 {
            controls.clone()
        } else {
            tape.select_rows(controls, (0..batch).map(|b| b * horizon + i).collect())?
        };
        let u = columns(tape, &u_rows)?;
        let l = cost.eval_tape(tape, &state, &r, &u)?;
        for (b, c) in stage_costs.iter_mut().enumerate() {
            c.push(l.data()[b]);
        }
        total = Some(match total {
            Some(acc) => tape.add(&acc, &l)?,
            None => l,
        });
        state = dynamics.step_tape(tape, &state, &u)?;
        for (b, traj) in trajectories.iter_mut().enumerate() {
            traj.push(state.iter().map(|c| c.data()[b]).collect());
        }
    }
    Ok(RolloutOutput {
        costs: total.expect("horizon >= 1"),
        trajectories,
        stage_costs,
    })
}

/// Single-sample rollout. `controls` is `N x n_input`; returns the visited
/// states and the scalar horizon cost `V`.
pub fn rollout<T: Real>(
    tape: &mut Tape<T>,
    dynamics: &dyn Dynamics<T>,
    cost: &dyn RunningCost<T>,
    x0: &[T],
    refs: &ReferenceWindow<T>,
    controls: &Tensor<T>,
) -> Result<(Vec<Vec<T>>, Tensor<T>)> {
    if controls.rank() != 2 || controls.shape()[0] != refs.len() {
        return Err(Error::HorizonMismatch {
            expected: refs.len(),
            got: controls.shape().first().copied().unwrap_or(0),
        });
    }
    let out = rollout_batch(tape, dynamics, cost, &[x0.to_vec()], std::slice::from_ref(refs), controls)?;
    let v = tape.sum(&out.costs)?;
    Ok((out.trajectories.into_iter().next().expect("one sample"), v))
}

/// Plain-valued horizon cost, no tape.
pub fn horizon_cost<T: Real>(
    dynamics: &dyn Dynamics<T>,
    cost: &dyn RunningCost<T>,
    x0: &[T],
    refs: &ReferenceWindow<T>,
    controls: &[T],
) -> Result<T> {
    let m = dynamics.n_input();
    if controls.len() != refs.len() * m {
        return Err(Error::HorizonMismatch {
            expected: refs.len(),
            got: controls.len() / m.max(1),
        });
    }
    let mut x = x0.to_vec();
    let mut v = T::zero();
    for (i, u) in controls.chunks(m).enumerate() {
        v = v + cost.eval(&x, refs.row(i), u);
        x = dynamics.step(&x, u)?;
    }
    Ok(v)
}
