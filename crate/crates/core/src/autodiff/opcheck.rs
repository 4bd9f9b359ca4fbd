//! Finite-difference check of every differentiable tape op in isolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::gradcheck::{grad_check_with, GradCheckOptions, GradCheckReport};
use super::{Tape, Tensor};
use crate::error::Result;

type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>>;

struct Case {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    f: OpFn,
}

#[derive(Clone, Debug, Serialize)]
pub struct OpCheck {
    pub op: &'static str,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches data")
}

/// Magnitudes in `[lo, hi)` with random sign.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn case(name: &'static str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>> + 'static) -> Case {
    Case {
        name,
        inputs,
        f: Box::new(f),
    }
}

fn cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut u = |shape: &[usize]| uniform(rng, shape, -1.0, 1.0);
    let (a34, b34, c34) = (u(&[3, 4]), u(&[3, 4]), u(&[3, 4]));
    let w45 = u(&[4, 5]);
    let (m42, x35, g15, b15, r14, s14, a23, b13, b22) = (
        u(&[4, 2]),
        u(&[3, 5]),
        u(&[1, 5]),
        u(&[1, 5]),
        u(&[1, 4]),
        u(&[1, 4]),
        u(&[2, 3]),
        u(&[1, 3]),
        u(&[2, 2]),
    );
    let away = signed(rng, &[3, 4], 0.5, 1.5);
    let kinks = signed(rng, &[3, 4], 0.1, 1.0);
    let positive = uniform(rng, &[3, 4], 0.5, 1.5);
    let gain = g15.map(|v| 1.0 + 0.5 * v);
    let angles = {
        let base = uniform(rng, &[3, 4], -2.5, 2.5);
        let data = base.data().iter().enumerate().map(|(i, v)| v + 2.0 * std::f64::consts::PI * (i as f64 - 5.0)).collect();
        Tensor::new(&[3, 4], data).expect("shape matches data")
    };
    vec![
        case("add", vec![a34.clone(), b34.clone()], |t, p| t.add(&p[0], &p[1])),
        case("sub", vec![a34.clone(), b34.clone()], |t, p| t.sub(&p[0], &p[1])),
        case("mul", vec![a34.clone(), b34.clone()], |t, p| t.mul(&p[0], &p[1])),
        case("div", vec![a34.clone(), away], |t, p| t.div(&p[0], &p[1])),
        case("scale", vec![a34.clone()], |t, p| t.scale(&p[0], 1.7)),
        case("shift", vec![a34.clone()], |t, p| t.shift(&p[0], -0.3)),
        case("neg", vec![a34.clone()], |t, p| t.neg(&p[0])),
        case("matmul", vec![a34.clone(), m42], |t, p| t.matmul(&p[0], &p[1])),
        case("transpose", vec![a34.clone()], |t, p| t.transpose(&p[0])),
        case("concat_rows", vec![a23.clone(), b13], |t, p| t.concat(0, &[&p[0], &p[1]])),
        case("concat_cols", vec![a23.clone(), b22], |t, p| t.concat(1, &[&p[0], &p[1]])),
        case("slice_rows", vec![a34.clone()], |t, p| t.slice(&p[0], 0, 1, 2)),
        case("slice_cols", vec![a34.clone()], |t, p| t.slice(&p[0], 1, 1, 2)),
        case("select_rows", vec![a34.clone()], |t, p| t.select_rows(&p[0], vec![0, 2, 0, 1])),
        case("reshape", vec![a34.clone()], |t, p| t.reshape(&p[0], &[2, 6])),
        case("sum", vec![a34.clone()], |t, p| t.sum(&p[0])),
        case("mean", vec![a34.clone()], |t, p| t.mean(&p[0])),
        case("square", vec![a34.clone()], |t, p| t.square(&p[0])),
        case("sqrt", vec![positive], |t, p| t.sqrt(&p[0])),
        case("tanh", vec![a34.clone()], |t, p| t.tanh(&p[0])),
        case("relu", vec![kinks], |t, p| t.relu(&p[0])),
        case("sin", vec![a34.clone()], |t, p| t.sin(&p[0])),
        case("cos", vec![a34.clone()], |t, p| t.cos(&p[0])),
        case("softmax", vec![x35.clone()], |t, p| t.softmax(&p[0])),
        case("layer_norm", vec![x35.clone(), gain, b15.clone()], |t, p| t.layer_norm(&p[0], &p[1], &p[2], 1e-5)),
        case("add_row", vec![a34.clone(), r14.clone()], |t, p| t.add_row(&p[0], &p[1])),
        case("mul_row", vec![c34.clone(), s14], |t, p| t.mul_row(&p[0], &p[1])),
        case("wrap_angle", vec![angles], |t, p| t.wrap_angle(&p[0])),
        case("linear", vec![a34, w45, b15], |t, p| t.linear(&p[0], &p[1], &p[2])),
        case("affine", vec![c34], |t, p| t.affine(&p[0], 0.6, 2.0)),
    ]
}

/// Runs a central-difference check of each op, contracted with a fixed random
/// weighting `sum(W * op(inputs))` so every output coordinate contributes.
pub fn op_suite(seed: u64, h: f64, tol: f64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let list = cases(&mut rng);
    let mut out = Vec::with_capacity(list.len());
    for c in list {
        let mut probe = Tape::new();
        let shape = (c.f)(&mut probe, &c.inputs)?.shape().to_vec();
        let weights = uniform(&mut rng, &shape, -1.0, 1.0);
        let f = |tape: &mut Tape<f64>, p: &[Tensor<f64>]| {
            let y = (c.f)(tape, p)?;
            let wy = tape.mul(&y, &weights)?;
            tape.sum(&wy)
        };
        let opts = GradCheckOptions {
            h,
            tol,
            seed,
            ..Default::default()
        };
        out.push(OpCheck {
            op: c.name,
            report: grad_check_with(f, &c.inputs, &opts)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_central_differences() {
        for seed in 0..3 {
            for c in op_suite(seed, 1e-6, 1e-4).unwrap() {
                assert!(c.report.passed, "{} seed {seed}: {}", c.op, c.report.max_rel_error);
            }
        }
    }

    #[test]
    fn suite_covers_every_op_kind() {
        let names: Vec<&str> = op_suite(0, 1e-6, 1e-4).unwrap().iter().map(|c| c.op).collect();
        for op in [
            "add", "sub", "mul", "div", "scale", "shift", "matmul", "transpose", "slice_rows", "select_rows", "reshape", "sum",
            "mean", "square", "sqrt", "tanh", "relu", "sin", "cos", "softmax", "layer_norm", "add_row", "mul_row", "wrap_angle",
        ] {
            assert!(names.contains(&op), "{op}");
        }
        assert!(names.iter().any(|n| n.starts_with("concat")));
    }
}
