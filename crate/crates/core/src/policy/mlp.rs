use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_batch, squash, uniform_weight, zero_row, FeatureMap, Policy, PolicyManifest};
use crate::autodiff::{ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::models::{ActionBounds, ReferenceWindow};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpHyper {
    pub hidden: usize,
    pub layers: usize,
    /// The only horizon this network can produce.
    pub horizon: usize,
}

impl Default for MlpHyper {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 3,
            horizon: 20,
        }
    }
}

/// Flattened `[x_t, X^R]` through `layers` tanh layers to an `N * n_input` head.
#[derive(Clone, Debug)]
pub struct MlpPolicy<T: Real> {
    pub hyper: MlpHyper,
    pub features: FeatureMap,
    pub bounds: ActionBounds<T>,
    params: ParamSet<T>,
}

impl<T: Real> MlpPolicy<T> {
    pub fn new(hyper: MlpHyper, features: FeatureMap, bounds: ActionBounds<T>, seed: u64) -> Result<Self> {
        if hyper.hidden == 0 || hyper.layers == 0 || hyper.horizon == 0 {
            return Err(Error::Config("mlp sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut fan_in = features.n_state_features() + hyper.horizon * FeatureMap::N_REF_FEATURES;
        for l in 0..hyper.layers {
            params.insert(format!("hidden{l}.w"), uniform_weight(&mut rng, fan_in, hyper.hidden, 1.0));
            params.insert(format!("hidden{l}.b"), zero_row(hyper.hidden));
            fan_in = hyper.hidden;
        }
        let out = hyper.horizon * bounds.dim();
        params.insert("head.w", uniform_weight(&mut rng, fan_in, out, 0.01));
        params.insert("head.b", zero_row(out));
        Ok(Self {
            hyper,
            features,
            bounds,
            params,
        })
    }
}

impl<T: Real> Policy<T> for MlpPolicy<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn bounds(&self) -> &ActionBounds<T> {
        &self.bounds
    }

    fn features(&self) -> &FeatureMap {
        &self.features
    }

    fn manifest(&self) -> PolicyManifest {
        PolicyManifest::Mlp {
            hyper: self.hyper.clone(),
            features: self.features.clone(),
            n_state: self.features.n_state,
            n_ref: FeatureMap::N_REF_FEATURES,
            n_input: self.bounds.dim(),
            bounds: super::cast_bounds(&self.bounds),
        }
    }

    fn forward_with(
        &self,
        tape: &mut Tape<T>,
        p: &ParamSet<T>,
        states: &[Vec<T>],
        refs: &[ReferenceWindow<T>],
    ) -> Result<Tensor<T>> {
        let (batch, n) = check_batch(states, refs, self.features.n_state)?;
        if n != self.hyper.horizon {
            return Err(Error::HorizonMismatch {
                expected: self.hyper.horizon,
                got: n,
            });
        }
        let width = self.features.n_state_features() + n * FeatureMap::N_REF_FEATURES;
        let mut input = Vec::with_capacity(batch * width);
        for (x, r) in states.iter().zip(refs) {
            input.extend(self.features.state_features(x));
            input.extend(self.features.ref_features(x, r));
        }
        let mut h = Tensor::matrix(batch, width, input)?;
        for l in 0..self.hyper.layers {
            h = tape.linear(&h, p.get(&format!("hidden{l}.w"))?, p.get(&format!("hidden{l}.b"))?)?;
            h = tape.tanh(&h)?;
        }
        let raw = tape.linear(&h, p.get("head.w")?, p.get("head.b")?)?;
        let raw = tape.reshape(&raw, &[batch * n, self.bounds.dim()])?;
        squash(tape, &raw, &self.bounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::gen_sine_reference;

    fn mlp() -> MlpPolicy<f64> {
        let hyper = MlpHyper {
            hidden: 16,
            ..Default::default()
        };
        MlpPolicy::new(hyper, FeatureMap::vehicle(), ActionBounds::vehicle(), 0).unwrap()
    }

    #[test]
    fn shape_and_bounds() {
        let p = mlp();
        let refs = gen_sine_reference(0, 20, 5.0).unwrap();
        let u = p.forward(&[0.0, 0.5, 0.0, 5.0, 0.0, 0.0], &refs).unwrap();
        assert_eq!((u.horizon(), u.n_input()), (20, 2));
        assert!(p.bounds.contains(u.data()));
    }

    #[test]
    fn horizon_mismatch() {
        let p = mlp();
        let refs = gen_sine_reference(0, 5, 5.0).unwrap();
        let err = p.forward(&[0.0, 0.5, 0.0, 5.0, 0.0, 0.0], &refs).unwrap_err();
        assert!(matches!(err, Error::HorizonMismatch { expected: 20, got: 5 }));
    }
}
