//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to rounding compare on an absolute scale.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (all when `None`).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-6,
            tol: 1e-4,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub index: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Relative error used by the checker.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `d f / d params` from the tape with central differences of step `h`.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Tensor<T>]) -> Result<Tensor<T>>,
{
    grad_check_with(
        f,
        params,
        &GradCheckOptions {
            h,
            tol,
            ..Default::default()
        },
    )
}

pub fn grad_check_with<T, F>(f: F, params: &[Tensor<T>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Tensor<T>]) -> Result<Tensor<T>>,
{
    if !(opts.h > 0.0) {
        return Err(Error::GradCheck(format!("step h must be positive, got {}", opts.h)));
    }
    let mut tape = Tape::new();
    let leaves: Vec<Tensor<T>> = params.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &leaves)?;
    let grads = tape.backward(&loss)?;

    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut scratch = Tape::new();
        let v = f(&mut scratch, values)?.item()?.as_f64();
        if !v.is_finite() {
            return Err(Error::GradCheck("function is non-finite at a perturbed point".into()));
        }
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<T>> = params.iter().map(Tensor::detach).collect();
    let mut report = Vec::with_capacity(params.len());
    let mut worst = 0.0f64;
    for (pi, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(leaf);
        let n = leaf.len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for &c in &coords {
            let base = work[pi].data()[c];
            work[pi].data_mut()[c] = base + T::lit(opts.h);
            let plus = eval(&work)?;
            work[pi].data_mut()[c] = base - T::lit(opts.h);
            let minus = eval(&work)?;
            work[pi].data_mut()[c] = base;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let exact = analytic.data()[c].as_f64();
            max_abs = max_abs.max((numeric - exact).abs());
            max_rel = max_rel.max(relative_error(exact, numeric, opts.floor));
        }
        worst = worst.max(max_rel);
        report.push(ParamCheck {
            index: pi,
            checked: coords.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(GradCheckReport {
        params: report,
        max_rel_error: worst,
        tol: opts.tol,
        passed: worst < opts.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_is_exact() {
        let q = Tensor::new(&[3, 3], vec![2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 3.0]).unwrap();
        let x = Tensor::new(&[3, 1], vec![0.7, -1.2, 0.4]).unwrap();
        let report = grad_check(
            |tape, p| {
                let qx = tape.matmul(&q, &p[0])?;
                let xt = tape.transpose(&p[0])?;
                let v = tape.matmul(&xt, &qx)?;
                tape.sum(&v)
            },
            &[x],
            1e-6,
            1e-8,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let report = grad_check(|_, _| Ok(Tensor::scalar(4.0)), &[x], 1e-6, 1e-12).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert!(report.passed);
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        assert!(grad_check(|tape, p| tape.sum(&p[0]), &[x.clone()], 0.0, 1e-4).is_err());
        // sqrt at 0 is fine, at -h it is not.
        assert!(grad_check(
            |tape, p| {
                let s = tape.sqrt(&p[0])?;
                tape.sum(&s)
            },
            &[x],
            1e-6,
            1e-4
        )
        .is_err());
    }
}
