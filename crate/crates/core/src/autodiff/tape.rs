//! Reverse-mode gradient tape over dense tensors.
//!
//! Every op evaluates its forward value immediately. When at least one input
//! carries a handle on this tape, the op is appended as a node together with
//! the values its backward rule needs. Ops whose inputs are all constants are
//! evaluated without recording anything, so inference through the same code
//! path leaves the tape empty.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{NodeRef, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{wrap_angle, Real};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Operations the tape knows how to differentiate.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind<T> {
    Add,
    Sub,
    Mul,
    Div,
    Scale(T),
    Shift(T),
    MatMul,
    Transpose,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    SelectRows(Vec<usize>),
    Reshape(Vec<usize>),
    Sum,
    Mean,
    Square,
    Sqrt,
    Tanh,
    Relu,
    Sin,
    Cos,
    /// Softmax over the last axis.
    Softmax,
    /// Normalization over the last axis; inputs are `(x, gain, bias)`.
    LayerNorm { eps: T },
    /// Adds a row vector to every row.
    AddRow,
    /// Multiplies every row elementwise by a row vector.
    MulRow,
    /// Wraps into `(-pi, pi]`; the derivative is taken as 1 everywhere.
    WrapAngle,
}

impl<T> OpKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Scale(_) => "scale",
            OpKind::Shift(_) => "shift",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::SelectRows(_) => "select_rows",
            OpKind::Reshape(_) => "reshape",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Square => "square",
            OpKind::Sqrt => "sqrt",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm { .. } => "layer_norm",
            OpKind::AddRow => "add_row",
            OpKind::MulRow => "mul_row",
            OpKind::WrapAngle => "wrap_angle",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Div
            | OpKind::MatMul
            | OpKind::AddRow
            | OpKind::MulRow => Some(2),
            OpKind::LayerNorm { .. } => Some(3),
            OpKind::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

/// Values retained for the backward rule.
#[derive(Debug)]
enum Saved<T> {
    Nothing,
    One(Vec<T>),
    Two(Vec<T>, Vec<T>),
    MatMul { a: Vec<T>, b: Vec<T>, m: usize, k: usize, n: usize },
    Dims { rows: usize, cols: usize },
    Concat { widths: Vec<usize>, rows: usize },
    LayerNorm { xhat: Vec<T>, rstd: Vec<T>, gain: Vec<T> },
}

#[derive(Debug)]
enum NodeOp<T> {
    Leaf,
    Op(OpKind<T>),
}

#[derive(Debug)]
struct Node<T> {
    op: NodeOp<T>,
    inputs: Vec<Option<usize>>,
    input_lens: Vec<usize>,
    shape: Vec<usize>,
    saved: Saved<T>,
}

/// Append-only record of tracked ops. One tape per rollout/update step.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `t`; zeros when `t` is untracked or not on a
    /// path to the loss.
    pub fn wrt(&self, t: &Tensor<T>) -> Tensor<T> {
        match self.get(t) {
            Some(g) => Tensor::from_parts(t.shape().to_vec(), g.to_vec(), None),
            None => Tensor::zeros(t.shape()),
        }
    }

    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        let node = t.node()?;
        if node.tape != self.tape {
            return None;
        }
        self.grads.get(node.index)?.as_deref()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input (a parameter or decision variable).
    pub fn leaf(&mut self, t: &Tensor<T>) -> Tensor<T> {
        let index = self.nodes.len();
        self.nodes.push(Node {
            op: NodeOp::Leaf,
            inputs: Vec::new(),
            input_lens: Vec::new(),
            shape: t.shape().to_vec(),
            saved: Saved::Nothing,
        });
        Tensor::from_parts(
            t.shape().to_vec(),
            t.data().to_vec(),
            Some(NodeRef {
                tape: self.id,
                index,
            }),
        )
    }

    /// Evaluates `kind` on `inputs`, appending a node when any input is tracked.
    pub fn record(&mut self, kind: OpKind<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let name = kind.name();
        match kind.arity() {
            Some(n) if n != inputs.len() => {
                return Err(Error::Unsupported {
                    op: name,
                    reason: format!("expects {n} inputs, got {}", inputs.len()),
                })
            }
            None if inputs.is_empty() => {
                return Err(Error::Unsupported {
                    op: name,
                    reason: "needs at least one input".into(),
                })
            }
            _ => {}
        }
        let mut ids = Vec::with_capacity(inputs.len());
        for t in inputs {
            match t.node() {
                Some(n) if n.tape != self.id => return Err(Error::ForeignTape),
                Some(n) => ids.push(Some(n.index)),
                None => ids.push(None),
            }
        }
        let tracked = ids.iter().any(Option::is_some);
        let (shape, data, saved) = forward(&kind, inputs, tracked)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        if !tracked {
            return Ok(Tensor::from_parts(shape, data, None));
        }
        let index = self.nodes.len();
        self.nodes.push(Node {
            op: NodeOp::Op(kind),
            inputs: ids,
            input_lens: inputs.iter().map(|t| t.len()).collect(),
            shape: shape.clone(),
            saved,
        });
        Ok(Tensor::from_parts(
            shape,
            data,
            Some(NodeRef {
                tape: self.id,
                index,
            }),
        ))
    }

    /// Propagates d(loss)/d(node) to every node reachable from `loss`.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<Gradients<T>> {
        if loss.len() != 1 {
            return Err(Error::NotScalar(loss.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        let Some(root) = loss.node() else {
            return Ok(Gradients {
                tape: self.id,
                grads,
            });
        };
        if root.tape != self.id || root.index >= self.nodes.len() {
            return Err(Error::ForeignTape);
        }
        grads[root.index] = Some(vec![T::one()]);
        for i in (0..=root.index).rev() {
            let node = &self.nodes[i];
            let NodeOp::Op(kind) = &node.op else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let contributions = backward_rule(kind, node, &g);
            for (slot, contrib) in node.inputs.iter().zip(contributions) {
                let (Some(j), Some(c)) = (slot, contrib) else {
                    continue;
                };
                match &mut grads[*j] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a = *a + *b),
                    empty => *empty = Some(c),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    pub fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Mul, &[a, b])
    }

    pub fn div(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Div, &[a, b])
    }

    pub fn scale(&mut self, a: &Tensor<T>, c: T) -> Result<Tensor<T>> {
        self.record(OpKind::Scale(c), &[a])
    }

    pub fn shift(&mut self, a: &Tensor<T>, c: T) -> Result<Tensor<T>> {
        self.record(OpKind::Shift(c), &[a])
    }

    pub fn neg(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Scale(-T::one()), &[a])
    }

    pub fn matmul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Transpose, &[a])
    }

    pub fn concat(&mut self, axis: usize, parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        self.record(OpKind::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        self.record(OpKind::Slice { axis, start, len }, &[a])
    }

    pub fn select_rows(&mut self, a: &Tensor<T>, rows: Vec<usize>) -> Result<Tensor<T>> {
        self.record(OpKind::SelectRows(rows), &[a])
    }

    pub fn reshape(&mut self, a: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        self.record(OpKind::Reshape(shape.to_vec()), &[a])
    }

    pub fn sum(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Mean, &[a])
    }

    pub fn square(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Square, &[a])
    }

    pub fn sqrt(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Sqrt, &[a])
    }

    pub fn tanh(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Tanh, &[a])
    }

    pub fn relu(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Relu, &[a])
    }

    pub fn sin(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Sin, &[a])
    }

    pub fn cos(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Cos, &[a])
    }

    pub fn softmax(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::Softmax, &[a])
    }

    pub fn layer_norm(&mut self, x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        self.record(OpKind::LayerNorm { eps }, &[x, gain, bias])
    }

    pub fn add_row(&mut self, x: &Tensor<T>, row: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::AddRow, &[x, row])
    }

    pub fn mul_row(&mut self, x: &Tensor<T>, row: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::MulRow, &[x, row])
    }

    pub fn wrap_angle(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        self.record(OpKind::WrapAngle, &[a])
    }

    /// `x W + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let xw = self.matmul(x, w)?;
        self.add_row(&xw, b)
    }

    /// `a * c + d` elementwise with scalar constants.
    pub fn affine(&mut self, a: &Tensor<T>, c: T, d: T) -> Result<Tensor<T>> {
        let s = self.scale(a, c)?;
        self.shift(&s, d)
    }
}

type Forward<T> = (Vec<usize>, Vec<T>, Saved<T>);

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn require_rank2<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::Unsupported {
            op,
            reason: format!("needs a rank-2 tensor, got shape {:?}", t.shape()),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn row_vector_len<T: Real>(op: &'static str, x: &Tensor<T>, row: &Tensor<T>) -> Result<usize> {
    let cols = x.cols();
    if row.rows() != 1 || row.cols() != cols || x.rank() == 0 {
        return Err(mismatch(op, x.shape(), row.shape()));
    }
    Ok(cols)
}

fn forward<T: Real>(kind: &OpKind<T>, inputs: &[&Tensor<T>], keep: bool) -> Result<Forward<T>> {
    let op = kind.name();
    let a = inputs[0];
    let elementwise = |f: &dyn Fn(T) -> T| a.data().iter().map(|&v| f(v)).collect::<Vec<T>>();
    let keep_input = || if keep { Saved::One(a.data().to_vec()) } else { Saved::Nothing };
    Ok(match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
            let b = inputs[1];
            if a.shape() != b.shape() {
                return Err(mismatch(op, a.shape(), b.shape()));
            }
            let f: fn(T, T) -> T = match kind {
                OpKind::Add => |x, y| x + y,
                OpKind::Sub => |x, y| x - y,
                OpKind::Mul => |x, y| x * y,
                _ => |x, y| x / y,
            };
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            let saved = match kind {
                OpKind::Mul | OpKind::Div if keep => Saved::Two(a.data().to_vec(), b.data().to_vec()),
                _ => Saved::Nothing,
            };
            (a.shape().to_vec(), data, saved)
        }
        OpKind::Scale(c) => (a.shape().to_vec(), elementwise(&|v| v * *c), Saved::Nothing),
        OpKind::Shift(c) => (a.shape().to_vec(), elementwise(&|v| v + *c), Saved::Nothing),
        OpKind::WrapAngle => (a.shape().to_vec(), elementwise(&wrap_angle), Saved::Nothing),
        OpKind::MatMul => {
            let b = inputs[1];
            let (m, k) = require_rank2(op, a)?;
            let (k2, n) = require_rank2(op, b)?;
            if k != k2 {
                return Err(mismatch(op, a.shape(), b.shape()));
            }
            let data = matmul(a.data(), b.data(), m, k, n);
            let saved = if keep {
                Saved::MatMul {
                    a: a.data().to_vec(),
                    b: b.data().to_vec(),
                    m,
                    k,
                    n,
                }
            } else {
                Saved::Nothing
            };
            (vec![m, n], data, saved)
        }
        OpKind::Transpose => {
            let (r, c) = require_rank2(op, a)?;
            let src = a.data();
            let mut data = Vec::with_capacity(r * c);
            for j in 0..c {
                for i in 0..r {
                    data.push(src[i * c + j]);
                }
            }
            (vec![c, r], data, Saved::Dims { rows: r, cols: c })
        }
        OpKind::Concat { axis } => {
            let (rows0, cols0) = require_rank2(op, a)?;
            let mut dims = Vec::with_capacity(inputs.len());
            for t in inputs {
                let (r, c) = require_rank2(op, t)?;
                let ok = match axis {
                    0 => c == cols0,
                    1 => r == rows0,
                    _ => false,
                };
                if !ok {
                    return Err(mismatch(op, a.shape(), t.shape()));
                }
                dims.push((r, c));
            }
            if *axis == 0 {
                let rows = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * cols0);
                for t in inputs {
                    data.extend_from_slice(t.data());
                }
                let widths = dims.iter().map(|d| d.0 * cols0).collect();
                (vec![rows, cols0], data, Saved::Concat { widths, rows: 1 })
            } else {
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(rows0 * cols);
                for r in 0..rows0 {
                    for (t, &(_, c)) in inputs.iter().zip(&dims) {
                        data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
                    }
                }
                let widths = dims.iter().map(|d| d.1).collect();
                (vec![rows0, cols], data, Saved::Concat { widths, rows: rows0 })
            }
        }
        OpKind::Slice { axis, start, len } => {
            let (r, c) = require_rank2(op, a)?;
            let extent = match axis {
                0 => r,
                1 => c,
                _ => {
                    return Err(Error::Unsupported {
                        op,
                        reason: format!("axis {axis}"),
                    })
                }
            };
            if start + len > extent {
                return Err(Error::InvalidShape {
                    shape: a.shape().to_vec(),
                    reason: format!("slice {start}..{} out of range on axis {axis}", start + len),
                });
            }
            let data = if *axis == 0 {
                a.data()[start * c..(start + len) * c].to_vec()
            } else {
                let mut d = Vec::with_capacity(r * len);
                for i in 0..r {
                    d.extend_from_slice(&a.data()[i * c + start..i * c + start + len]);
                }
                d
            };
            let shape = if *axis == 0 { vec![*len, c] } else { vec![r, *len] };
            (shape, data, Saved::Dims { rows: r, cols: c })
        }
        OpKind::SelectRows(idx) => {
            let (r, c) = require_rank2(op, a)?;
            if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
                return Err(Error::InvalidShape {
                    shape: a.shape().to_vec(),
                    reason: format!("row index {bad} out of range"),
                });
            }
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                data.extend_from_slice(&a.data()[i * c..(i + 1) * c]);
            }
            (vec![idx.len(), c], data, Saved::Dims { rows: r, cols: c })
        }
        OpKind::Reshape(shape) => {
            if shape.iter().product::<usize>() != a.len() {
                return Err(mismatch(op, a.shape(), shape));
            }
            (shape.clone(), a.data().to_vec(), Saved::Nothing)
        }
        OpKind::Sum | OpKind::Mean => {
            let s = a.data().iter().fold(T::zero(), |acc, &v| acc + v);
            let v = if matches!(kind, OpKind::Mean) {
                if a.is_empty() {
                    return Err(Error::InvalidShape {
                        shape: a.shape().to_vec(),
                        reason: "mean of an empty tensor".into(),
                    });
                }
                s / T::from_usize_lossy(a.len())
            } else {
                s
            };
            (vec![], vec![v], Saved::Nothing)
        }
        OpKind::Square => (a.shape().to_vec(), elementwise(&|v| v * v), keep_input()),
        OpKind::Relu => (a.shape().to_vec(), elementwise(&|v| v.max(T::zero())), keep_input()),
        OpKind::Sin => (a.shape().to_vec(), elementwise(&T::sin), keep_input()),
        OpKind::Cos => (a.shape().to_vec(), elementwise(&T::cos), keep_input()),
        OpKind::Sqrt | OpKind::Tanh => {
            let data = if matches!(kind, OpKind::Sqrt) {
                elementwise(&T::sqrt)
            } else {
                elementwise(&T::tanh)
            };
            let saved = if keep { Saved::One(data.clone()) } else { Saved::Nothing };
            (a.shape().to_vec(), data, saved)
        }
        OpKind::Softmax => {
            if a.rank() == 0 {
                return Err(Error::Unsupported {
                    op,
                    reason: "softmax of a scalar".into(),
                });
            }
            let w = a.cols();
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(w) {
                let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut total = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total = total + *v;
                }
                for v in row.iter_mut() {
                    *v = *v / total;
                }
            }
            let saved = if keep { Saved::One(data.clone()) } else { Saved::Nothing };
            (a.shape().to_vec(), data, saved)
        }
        OpKind::LayerNorm { eps } => {
            let (gain, bias) = (inputs[1], inputs[2]);
            let w = row_vector_len(op, a, gain)?;
            row_vector_len(op, a, bias)?;
            let rows = a.rows();
            let inv_w = T::one() / T::from_usize_lossy(w);
            let mut xhat = Vec::with_capacity(a.len());
            let mut rstd = Vec::with_capacity(rows);
            let mut data = Vec::with_capacity(a.len());
            for row in a.data().chunks(w) {
                let mean = row.iter().fold(T::zero(), |s, &v| s + v) * inv_w;
                let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) * inv_w;
                let r = T::one() / (var + *eps).sqrt();
                rstd.push(r);
                for (j, &v) in row.iter().enumerate() {
                    let h = (v - mean) * r;
                    xhat.push(h);
                    data.push(h * gain.data()[j] + bias.data()[j]);
                }
            }
            let saved = if keep {
                Saved::LayerNorm {
                    xhat,
                    rstd,
                    gain: gain.data().to_vec(),
                }
            } else {
                Saved::Nothing
            };
            (a.shape().to_vec(), data, saved)
        }
        OpKind::AddRow | OpKind::MulRow => {
            let row = inputs[1];
            let w = row_vector_len(op, a, row)?;
            let r = row.data();
            let data: Vec<T> = if matches!(kind, OpKind::AddRow) {
                a.data().iter().enumerate().map(|(i, &v)| v + r[i % w]).collect()
            } else {
                a.data().iter().enumerate().map(|(i, &v)| v * r[i % w]).collect()
            };
            let saved = match kind {
                OpKind::MulRow if keep => Saved::Two(a.data().to_vec(), r.to_vec()),
                _ => Saved::Dims {
                    rows: a.rows(),
                    cols: w,
                },
            };
            (a.shape().to_vec(), data, saved)
        }
    })
}

/// Returns one optional gradient per input, in input order.
fn backward_rule<T: Real>(kind: &OpKind<T>, node: &Node<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
    let wanted = |i: usize| node.inputs[i].is_some();
    let map = |f: &dyn Fn(usize, T) -> T| -> Vec<T> { g.iter().enumerate().map(|(i, &v)| f(i, v)).collect() };
    match (kind, &node.saved) {
        (OpKind::Add, _) => vec![Some(g.to_vec()), wanted(1).then(|| g.to_vec())],
        (OpKind::Sub, _) => vec![Some(g.to_vec()), wanted(1).then(|| g.iter().map(|&v| -v).collect())],
        (OpKind::Mul, Saved::Two(a, b)) => vec![
            wanted(0).then(|| map(&|i, v| v * b[i])),
            wanted(1).then(|| map(&|i, v| v * a[i])),
        ],
        (OpKind::Div, Saved::Two(a, b)) => vec![
            wanted(0).then(|| map(&|i, v| v / b[i])),
            wanted(1).then(|| map(&|i, v| -v * a[i] / (b[i] * b[i]))),
        ],
        (OpKind::Scale(c), _) => vec![Some(g.iter().map(|&v| v * *c).collect())],
        (OpKind::Shift(_) | OpKind::WrapAngle | OpKind::Reshape(_), _) => vec![Some(g.to_vec())],
        (OpKind::MatMul, Saved::MatMul { a, b, m, k, n }) => {
            let (m, k, n) = (*m, *k, *n);
            let ga = wanted(0).then(|| {
                let mut out = vec![T::zero(); m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &b[p * n..(p + 1) * n];
                        out[i * k + p] = dot(grow, brow);
                    }
                }
                out
            });
            let gb = wanted(1).then(|| {
                let mut out = vec![T::zero(); k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = a[i * k + p];
                        if aip != T::zero() {
                            axpy(aip, grow, &mut out[p * n..(p + 1) * n]);
                        }
                    }
                }
                out
            });
            vec![ga, gb]
        }
        (OpKind::Transpose, Saved::Dims { rows, cols }) => {
            let (r, c) = (*rows, *cols);
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[i * c + j] = g[j * r + i];
                }
            }
            vec![Some(out)]
        }
        (OpKind::Concat { axis }, Saved::Concat { widths, rows }) => {
            let mut parts: Vec<Option<Vec<T>>> = Vec::with_capacity(widths.len());
            if *axis == 0 {
                let mut offset = 0;
                for (i, &w) in widths.iter().enumerate() {
                    parts.push(wanted(i).then(|| g[offset..offset + w].to_vec()));
                    offset += w;
                }
            } else {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (i, &w) in widths.iter().enumerate() {
                    parts.push(wanted(i).then(|| {
                        let mut out = Vec::with_capacity(rows * w);
                        for r in 0..*rows {
                            out.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        out
                    }));
                    offset += w;
                }
            }
            parts
        }
        (OpKind::Slice { axis, start, len }, Saved::Dims { rows, cols }) => {
            let (r, c) = (*rows, *cols);
            let mut out = vec![T::zero(); r * c];
            if *axis == 0 {
                out[start * c..(start + len) * c].copy_from_slice(g);
            } else {
                for i in 0..r {
                    out[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
            }
            vec![Some(out)]
        }
        (OpKind::SelectRows(idx), Saved::Dims { rows, cols }) => {
            let c = *cols;
            let mut out = vec![T::zero(); rows * c];
            for (k, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    out[i * c + j] = out[i * c + j] + g[k * c + j];
                }
            }
            vec![Some(out)]
        }
        (OpKind::Sum, _) => vec![Some(vec![g[0]; node.input_lens[0]])],
        (OpKind::Mean, _) => {
            let n = node.input_lens[0];
            vec![Some(vec![g[0] / T::from_usize_lossy(n); n])]
        }
        (OpKind::Square, Saved::One(x)) => vec![Some(map(&|i, v| v * (x[i] + x[i])))],
        (OpKind::Sqrt, Saved::One(y)) => vec![Some(map(&|i, v| v / (y[i] + y[i])))],
        (OpKind::Tanh, Saved::One(y)) => vec![Some(map(&|i, v| v * (T::one() - y[i] * y[i])))],
        (OpKind::Relu, Saved::One(x)) => vec![Some(map(&|i, v| if x[i] > T::zero() { v } else { T::zero() }))],
        (OpKind::Sin, Saved::One(x)) => vec![Some(map(&|i, v| v * x[i].cos()))],
        (OpKind::Cos, Saved::One(x)) => vec![Some(map(&|i, v| -v * x[i].sin()))],
        (OpKind::Softmax, Saved::One(y)) => {
            let w = node.shape.last().copied().unwrap_or(1);
            let mut out = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(w).zip(y.chunks(w)) {
                let s = dot(grow, yrow);
                out.extend(grow.iter().zip(yrow).map(|(&gv, &yv)| yv * (gv - s)));
            }
            vec![Some(out)]
        }
        (OpKind::LayerNorm { .. }, Saved::LayerNorm { xhat, rstd, gain }) => {
            let w = gain.len();
            let inv_w = T::one() / T::from_usize_lossy(w);
            let gx = wanted(0).then(|| {
                let mut out = Vec::with_capacity(g.len());
                for (r, (grow, hrow)) in g.chunks(w).zip(xhat.chunks(w)).enumerate() {
                    let dh: Vec<T> = grow.iter().zip(gain).map(|(&a, &b)| a * b).collect();
                    let mean_dh = dh.iter().fold(T::zero(), |s, &v| s + v) * inv_w;
                    let mean_dhh = dot(&dh, hrow) * inv_w;
                    out.extend(
                        dh.iter()
                            .zip(hrow)
                            .map(|(&d, &h)| rstd[r] * (d - mean_dh - h * mean_dhh)),
                    );
                }
                out
            });
            let ggain = wanted(1).then(|| {
                let mut out = vec![T::zero(); w];
                for (grow, hrow) in g.chunks(w).zip(xhat.chunks(w)) {
                    for j in 0..w {
                        out[j] = out[j] + grow[j] * hrow[j];
                    }
                }
                out
            });
            let gbias = wanted(2).then(|| column_sums(g, w));
            vec![gx, ggain, gbias]
        }
        (OpKind::AddRow, Saved::Dims { cols, .. }) => {
            vec![wanted(0).then(|| g.to_vec()), wanted(1).then(|| column_sums(g, *cols))]
        }
        (OpKind::MulRow, Saved::Two(x, row)) => {
            let w = row.len();
            let gx = wanted(0).then(|| map(&|i, v| v * row[i % w]));
            let grow = wanted(1).then(|| {
                let mut out = vec![T::zero(); w];
                for (i, (&gv, &xv)) in g.iter().zip(x).enumerate() {
                    out[i % w] = out[i % w] + gv * xv;
                }
                out
            });
            vec![gx, grow]
        }
        (kind, _) => unreachable!("saved context missing for {}", kind.name()),
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn column_sums<T: Real>(g: &[T], w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); w];
    for row in g.chunks(w) {
        axpy(T::one(), row, &mut out);
    }
    out
}

pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != T::zero() {
                axpy(aip, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
    out
}
