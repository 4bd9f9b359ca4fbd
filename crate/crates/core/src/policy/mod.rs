//! Explicit control policies: the encoder-only transformer and the
//! fixed-horizon MLP baseline, plus their shared input features and
//! checkpoint plumbing.

mod features;
mod mlp;
mod transformer;

pub use features::FeatureMap;
pub use mlp::{MlpHyper, MlpPolicy};
pub use transformer::{positional_encoding, TransformerHyper, TransformerPolicy};

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::autodiff::{checkpoint, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::models::{ActionBounds, ControlSequence, ReferenceWindow};
use crate::scalar::Real;

/// A map from `(x_t, X^R)` to an `N x n_input` control sequence.
pub trait Policy<T: Real>: Send + Sync {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    fn bounds(&self) -> &ActionBounds<T>;
    fn features(&self) -> &FeatureMap;
    fn manifest(&self) -> PolicyManifest;

    /// Batched forward pass with explicit parameters. Returns a
    /// `(B * N) x n_input` tensor, sample-major. Nothing is recorded on `tape`
    /// unless `params` (or the inputs) are tracked leaves of it.
    fn forward_with(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        states: &[Vec<T>],
        refs: &[ReferenceWindow<T>],
    ) -> Result<Tensor<T>>;

    fn n_input(&self) -> usize {
        self.bounds().dim()
    }

    /// Inference for a single state.
    fn forward(&self, x: &[T], refs: &ReferenceWindow<T>) -> Result<ControlSequence<T>> {
        let mut tape = Tape::new();
        let out = self.forward_with(&mut tape, self.params(), &[x.to_vec()], std::slice::from_ref(refs))?;
        ControlSequence::new(self.n_input(), out.into_data())
    }
}

/// Everything needed to rebuild a policy around a stored parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyManifest {
    Transformer {
        hyper: TransformerHyper,
        features: FeatureMap,
        n_state: usize,
        n_ref: usize,
        n_input: usize,
        bounds: ActionBounds<f64>,
    },
    Mlp {
        hyper: MlpHyper,
        features: FeatureMap,
        n_state: usize,
        n_ref: usize,
        n_input: usize,
        bounds: ActionBounds<f64>,
    },
}

impl PolicyManifest {
    pub fn build<T: Real>(&self, seed: u64) -> Result<Box<dyn Policy<T>>> {
        Ok(match self {
            PolicyManifest::Transformer {
                hyper, features, bounds, ..
            } => Box::new(TransformerPolicy::new(hyper.clone(), features.clone(), cast_bounds(bounds), seed)?),
            PolicyManifest::Mlp {
                hyper, features, bounds, ..
            } => Box::new(MlpPolicy::new(hyper.clone(), features.clone(), cast_bounds(bounds), seed)?),
        })
    }
}

pub fn cast_bounds<T: Real, U: Real>(b: &ActionBounds<T>) -> ActionBounds<U> {
    ActionBounds {
        lo: b.lo.iter().map(|v| U::lit(v.as_f64())).collect(),
        hi: b.hi.iter().map(|v| U::lit(v.as_f64())).collect(),
    }
}

/// Writes parameters plus the manifest (and any extra metadata) to `path`.
pub fn save_policy<T: Real>(path: &Path, policy: &dyn Policy<T>, extra: &Map<String, Value>) -> Result<()> {
    let mut meta = extra.clone();
    meta.insert("policy".into(), serde_json::to_value(policy.manifest())?);
    checkpoint::save(path, policy.params(), &meta)
}

/// Reads a checkpoint written by [`save_policy`].
pub fn load_policy<T: Real>(path: &Path) -> Result<(Box<dyn Policy<T>>, Map<String, Value>)> {
    let (params, meta) = checkpoint::load::<T>(path)?;
    let manifest: PolicyManifest = serde_json::from_value(
        meta.get("policy")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("missing policy manifest".into()))?,
    )?;
    let mut policy = manifest.build::<T>(0)?;
    policy.params().check_compatible(&params)?;
    *policy.params_mut() = params;
    Ok((policy, meta))
}

/// Validates a batch and returns `(B, N)`.
pub(crate) fn check_batch<T: Real>(states: &[Vec<T>], refs: &[ReferenceWindow<T>], n_state: usize) -> Result<(usize, usize)> {
    if states.is_empty() || states.len() != refs.len() {
        return Err(Error::ShapeMismatch {
            op: "policy_forward",
            left: vec![states.len()],
            right: vec![refs.len()],
        });
    }
    let n = refs[0].len();
    if n == 0 {
        return Err(Error::EmptyHorizon);
    }
    if let Some(r) = refs.iter().find(|r| r.len() != n) {
        return Err(Error::HorizonMismatch {
            expected: n,
            got: r.len(),
        });
    }
    if let Some(x) = states.iter().find(|x| x.len() != n_state) {
        return Err(Error::ShapeMismatch {
            op: "policy_forward",
            left: vec![x.len()],
            right: vec![n_state],
        });
    }
    Ok((states.len(), n))
}

/// `lo + (hi - lo) (tanh(raw) + 1) / 2`, per column.
pub(crate) fn squash<T: Real>(tape: &mut Tape<T>, raw: &Tensor<T>, bounds: &ActionBounds<T>) -> Result<Tensor<T>> {
    let half: Vec<T> = (0..bounds.dim()).map(|i| bounds.range(i) * T::lit(0.5)).collect();
    let mid: Vec<T> = (0..bounds.dim()).map(|i| (bounds.hi[i] + bounds.lo[i]) * T::lit(0.5)).collect();
    let t = tape.tanh(raw)?;
    let t = tape.mul_row(&t, &Tensor::row(&half)?)?;
    tape.add_row(&t, &Tensor::row(&mid)?)
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights times `gain`.
pub(crate) fn uniform_weight<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, gain: f64) -> Tensor<T> {
    let a = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| T::lit(gain * rng.gen_range(-a..a))).collect();
    Tensor::from_parts(vec![fan_in, fan_out], data, None)
}

pub(crate) fn zero_row<T: Real>(n: usize) -> Tensor<T> {
    Tensor::zeros(&[1, n])
}

pub(crate) fn one_row<T: Real>(n: usize) -> Tensor<T> {
    Tensor::full(&[1, n], T::one())
}
