use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_batch, one_row, squash, uniform_weight, zero_row, FeatureMap, Policy, PolicyManifest};
use crate::autodiff::{ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::models::{ActionBounds, ReferenceWindow};
use crate::scalar::Real;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerHyper {
    pub d_embed: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ffn: usize,
    /// Largest horizon used in training; inference accepts any `N >= 1`.
    pub n_max: usize,
}

impl TransformerHyper {
    pub fn desk() -> Self {
        Self {
            d_embed: 32,
            n_heads: 2,
            n_layers: 1,
            d_ffn: 32,
            n_max: 20,
        }
    }

    pub fn paper() -> Self {
        Self {
            d_embed: 256,
            n_heads: 4,
            n_layers: 2,
            d_ffn: 256,
            n_max: 20,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_embed / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_embed == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ffn == 0 || self.n_max == 0 {
            return Err(Error::Config("transformer sizes must be positive".into()));
        }
        if self.d_embed % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_embed={} is not divisible by n_heads={}",
                self.d_embed, self.n_heads
            )));
        }
        Ok(())
    }
}

impl Default for TransformerHyper {
    fn default() -> Self {
        Self::desk()
    }
}

/// Fixed sinusoidal encoding: `PE[p, 2i] = sin(p / 10000^(2i/d))`,
/// `PE[p, 2i+1] = cos(p / 10000^(2i/d))`. Row 0 is the state token.
pub fn positional_encoding<T: Real>(len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for p in 0..len {
        for j in 0..d {
            let freq = 10000f64.powf(-((j - j % 2) as f64) / d as f64);
            let a = p as f64 * freq;
            data.push(T::lit(if j % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    Tensor::from_parts(vec![len, d], data, None)
}

/// Parameter initialization: uniform `1/sqrt(fan_in)` weights, zero biases,
/// unit layer-norm gains, final decoder layer scaled by 0.01.
pub fn init_transformer<T: Real>(
    hyper: &TransformerHyper,
    n_state_features: usize,
    n_input: usize,
    seed: u64,
) -> Result<ParamSet<T>> {
    hyper.validate()?;
    let d = hyper.d_embed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    p.insert("embed_x.w", uniform_weight(&mut rng, n_state_features, d, 1.0));
    p.insert("embed_x.b", zero_row(d));
    p.insert("embed_r.w", uniform_weight(&mut rng, FeatureMap::N_REF_FEATURES, d, 1.0));
    p.insert("embed_r.b", zero_row(d));
    for l in 0..hyper.n_layers {
        for name in ["q", "k", "v", "o"] {
            p.insert(format!("layer{l}.w{name}"), uniform_weight(&mut rng, d, d, 1.0));
            p.insert(format!("layer{l}.b{name}"), zero_row(d));
        }
        p.insert(format!("layer{l}.ln1.gain"), one_row(d));
        p.insert(format!("layer{l}.ln1.bias"), zero_row(d));
        p.insert(format!("layer{l}.ffn.w1"), uniform_weight(&mut rng, d, hyper.d_ffn, 1.0));
        p.insert(format!("layer{l}.ffn.b1"), zero_row(hyper.d_ffn));
        p.insert(format!("layer{l}.ffn.w2"), uniform_weight(&mut rng, hyper.d_ffn, d, 1.0));
        p.insert(format!("layer{l}.ffn.b2"), zero_row(d));
        p.insert(format!("layer{l}.ln2.gain"), one_row(d));
        p.insert(format!("layer{l}.ln2.bias"), zero_row(d));
    }
    p.insert("dec.w1", uniform_weight(&mut rng, d, d, 1.0));
    p.insert("dec.b1", zero_row(d));
    p.insert("dec.w2", uniform_weight(&mut rng, d, n_input, 0.01));
    p.insert("dec.b2", zero_row(n_input));
    Ok(p)
}

/// Encoder-only transformer over `[state token, N reference tokens]`.
#[derive(Clone, Debug)]
pub struct TransformerPolicy<T: Real> {
    pub hyper: TransformerHyper,
    pub features: FeatureMap,
    pub bounds: ActionBounds<T>,
    params: ParamSet<T>,
}

impl<T: Real> TransformerPolicy<T> {
    pub fn new(hyper: TransformerHyper, features: FeatureMap, bounds: ActionBounds<T>, seed: u64) -> Result<Self> {
        let params = init_transformer(&hyper, features.n_state_features(), bounds.dim(), seed)?;
        Ok(Self {
            hyper,
            features,
            bounds,
            params,
        })
    }

    fn encoder_layer(
        &self,
        tape: &mut Tape<T>,
        p: &ParamSet<T>,
        layer: usize,
        h: &Tensor<T>,
        batch: usize,
        len: usize,
    ) -> Result<Tensor<T>> {
        let name = |s: &str| format!("layer{layer}.{s}");
        let q = tape.linear(h, p.get(&name("wq"))?, p.get(&name("bq"))?)?;
        let k = tape.linear(h, p.get(&name("wk"))?, p.get(&name("bk"))?)?;
        let v = tape.linear(h, p.get(&name("wv"))?, p.get(&name("bv"))?)?;
        let kt = tape.transpose(&k)?;
        let dh = self.hyper.head_dim();
        let inv_sqrt = T::lit(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.hyper.n_heads);
        for head in 0..self.hyper.n_heads {
            let qh = tape.slice(&q, 1, head * dh, dh)?;
            let kh = tape.slice(&kt, 0, head * dh, dh)?;
            let vh = tape.slice(&v, 1, head * dh, dh)?;
            let mut per_sample = Vec::with_capacity(batch);
            for b in 0..batch {
                let qs = tape.slice(&qh, 0, b * len, len)?;
                let ks = tape.slice(&kh, 1, b * len, len)?;
                let vs = tape.slice(&vh, 0, b * len, len)?;
                let scores = tape.matmul(&qs, &ks)?;
                let scores = tape.scale(&scores, inv_sqrt)?;
                let attn = tape.softmax(&scores)?;
                per_sample.push(tape.matmul(&attn, &vs)?);
            }
            let refs: Vec<&Tensor<T>> = per_sample.iter().collect();
            heads.push(tape.concat(0, &refs)?);
        }
        let refs: Vec<&Tensor<T>> = heads.iter().collect();
        let attn = tape.concat(1, &refs)?;
        let attn = tape.linear(&attn, p.get(&name("wo"))?, p.get(&name("bo"))?)?;
        let h1 = tape.add(h, &attn)?;
        let h1 = tape.layer_norm(&h1, p.get(&name("ln1.gain"))?, p.get(&name("ln1.bias"))?, T::lit(LN_EPS))?;
        let f = tape.linear(&h1, p.get(&name("ffn.w1"))?, p.get(&name("ffn.b1"))?)?;
        let f = tape.relu(&f)?;
        let f = tape.linear(&f, p.get(&name("ffn.w2"))?, p.get(&name("ffn.b2"))?)?;
        let h2 = tape.add(&h1, &f)?;
        tape.layer_norm(&h2, p.get(&name("ln2.gain"))?, p.get(&name("ln2.bias"))?, T::lit(LN_EPS))
    }
}

impl<T: Real> Policy<T> for TransformerPolicy<T> {
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
        PolicyManifest::Transformer {
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
        let len = n + 1;
        let d = self.hyper.d_embed;
        let nsf = self.features.n_state_features();
        let sf: Vec<T> = states.iter().flat_map(|x| self.features.state_features(x)).collect();
        let rf: Vec<T> = states
            .iter()
            .zip(refs)
            .flat_map(|(x, r)| self.features.ref_features(x, r))
            .collect();
        let s_tok = tape.linear(&Tensor::matrix(batch, nsf, sf)?, p.get("embed_x.w")?, p.get("embed_x.b")?)?;
        let r_tok = tape.linear(
            &Tensor::matrix(batch * n, FeatureMap::N_REF_FEATURES, rf)?,
            p.get("embed_r.w")?,
            p.get("embed_r.b")?,
        )?;
        let stacked = tape.concat(0, &[&s_tok, &r_tok])?;
        let order: Vec<usize> = (0..batch)
            .flat_map(|b| std::iter::once(b).chain((0..n).map(move |i| batch + b * n + i)))
            .collect();
        let tokens = tape.select_rows(&stacked, order)?;
        let pe = positional_encoding::<T>(len, d);
        let tiled = Tensor::from_parts(vec![batch * len, d], pe.data().repeat(batch), None);
        let mut h = tape.add(&tokens, &tiled)?;
        for layer in 0..self.hyper.n_layers {
            h = self.encoder_layer(tape, p, layer, &h, batch, len)?;
        }
        let action_rows: Vec<usize> = (0..batch).flat_map(|b| (1..len).map(move |i| b * len + i)).collect();
        let z = tape.select_rows(&h, action_rows)?;
        let hidden = tape.linear(&z, p.get("dec.w1")?, p.get("dec.b1")?)?;
        let hidden = tape.tanh(&hidden)?;
        let raw = tape.linear(&hidden, p.get("dec.w2")?, p.get("dec.b2")?)?;
        squash(tape, &raw, &self.bounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::gen_sine_reference;

    fn policy(seed: u64) -> TransformerPolicy<f64> {
        TransformerPolicy::new(TransformerHyper::desk(), FeatureMap::vehicle(), ActionBounds::vehicle(), seed).unwrap()
    }

    #[test]
    fn encoding_first_row_and_prefix() {
        let pe = positional_encoding::<f64>(4, 6);
        assert_eq!(pe.shape(), &[4, 6]);
        for j in 0..6 {
            assert_eq!(pe.at(0, j), if j % 2 == 0 { 0.0 } else { 1.0 });
        }
        let longer = positional_encoding::<f64>(9, 6);
        assert_eq!(&longer.data()[..24], pe.data());
    }

    #[test]
    fn hyper_validation() {
        let mut h = TransformerHyper::paper();
        assert_eq!(h.head_dim(), 64);
        h.d_embed = 10;
        assert!(h.validate().is_err());
        assert!(TransformerPolicy::<f64>::new(h, FeatureMap::vehicle(), ActionBounds::vehicle(), 0).is_err());
    }

    #[test]
    fn same_seed_same_params() {
        assert_eq!(policy(3).params(), policy(3).params());
        assert_ne!(policy(3).params(), policy(4).params());
    }

    #[test]
    fn output_shape_any_horizon() {
        let p = policy(0);
        let x = [0.2, 0.1, 0.05, 5.0, 0.0, 0.0];
        for n in [1, 7, 20, 30] {
            let refs = gen_sine_reference(1, n, 5.0).unwrap();
            let u = p.forward(&x, &refs).unwrap();
            assert_eq!(u.horizon(), n);
            assert_eq!(u.n_input(), 2);
            assert!(p.bounds.contains(u.data()));
        }
    }

    #[test]
    fn inference_leaves_tape_empty() {
        let p = policy(0);
        let mut tape = Tape::new();
        let refs = gen_sine_reference(0, 5, 5.0).unwrap();
        p.forward_with(&mut tape, p.params(), &[vec![0.0, 0.0, 0.0, 5.0, 0.0, 0.0]], &[refs])
            .unwrap();
        assert!(tape.is_empty());
    }

    #[test]
    fn batch_rows_match_single_calls() {
        let p = policy(1);
        let xs = vec![vec![0.0, 0.1, 0.0, 5.0, 0.0, 0.0], vec![3.0, 0.8, 0.2, 4.5, 0.1, -0.05]];
        let rs = vec![gen_sine_reference(0, 6, 5.0).unwrap(), gen_sine_reference(6, 6, 5.0).unwrap()];
        let mut tape = Tape::new();
        let batch = p.forward_with(&mut tape, p.params(), &xs, &rs).unwrap();
        for b in 0..2 {
            let single = p.forward(&xs[b], &rs[b]).unwrap();
            for (a, c) in single.data().iter().zip(&batch.data()[b * 12..(b + 1) * 12]) {
                assert!((a - c).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn state_length_checked() {
        let p = policy(0);
        let refs = gen_sine_reference(0, 3, 5.0).unwrap();
        assert!(p.forward(&[0.0; 5], &refs).is_err());
    }
}
