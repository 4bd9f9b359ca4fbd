use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamSet<f64>,
    pub v: ParamSet<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet<f64>) -> Result<Self> {
        if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::Config(format!("invalid optimizer settings {config:?}")));
        }
        Ok(Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        })
    }

    /// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update(&mut self, params: &mut ParamSet<f64>, grads: &ParamSet<f64>) -> Result<()> {
        params.check_compatible(grads)?;
        params.check_compatible(&self.m)?;
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            let mut m_data = self.m.get(name)?.data().to_vec();
            let mut v_data = self.v.get(name)?.data().to_vec();
            let mut p_data = p.data().to_vec();
            for i in 0..p_data.len() {
                let gi = g.data()[i];
                m_data[i] = c.beta1 * m_data[i] + (1.0 - c.beta1) * gi;
                v_data[i] = c.beta2 * v_data[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m_data[i] / bc1;
                let vh = v_data[i] / bc2;
                p_data[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
            let shape = p.shape().to_vec();
            *p = Tensor::new(&shape, p_data)?;
            *self.m.get_mut(name).expect("compatible") = Tensor::new(&shape, m_data)?;
            *self.v.get_mut(name).expect("compatible") = Tensor::new(&shape, v_data)?;
        }
        Ok(())
    }

    /// Moments as one set with `m.` / `v.` prefixes, for checkpointing.
    pub fn to_param_set(&self) -> ParamSet<f64> {
        let mut out = ParamSet::new();
        for (k, t) in self.m.iter() {
            out.insert(format!("m.{k}"), t.clone());
        }
        for (k, t) in self.v.iter() {
            out.insert(format!("v.{k}"), t.clone());
        }
        out
    }

    pub fn from_param_set(config: AdamConfig, step: u64, set: &ParamSet<f64>, like: &ParamSet<f64>) -> Result<Self> {
        let mut adam = Self::new(config, like)?;
        adam.step = step;
        for (name, _) in like.iter() {
            *adam.m.get_mut(name).expect("same names") = set.get(&format!("m.{name}"))?.clone();
            *adam.v.get_mut(name).expect("same names") = set.get(&format!("v.{name}"))?.clone();
        }
        like.check_compatible(&adam.m)?;
        like.check_compatible(&adam.v)?;
        Ok(adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: Vec<f64>) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(&[v.len()], v).unwrap());
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(vec![1.0, -2.0]);
        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        adam.update(&mut p, &single(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_is_lr_times_normalized_gradient() {
        let g = [0.5, -3.0, 1e-3];
        let mut p = single(vec![0.0; 3]);
        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        adam.update(&mut p, &single(g.to_vec())).unwrap();
        for (d, gi) in p.get("w").unwrap().data().iter().zip(g) {
            let expect = -1e-3 * gi / (gi.abs() + 1e-8);
            assert!((d - expect).abs() < 1e-15, "{d} vs {expect}");
        }
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut p = single(vec![0.0]);
        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        let mut prev = 0.0;
        for _ in 0..500 {
            adam.update(&mut p, &single(vec![2.0])).unwrap();
            let now = p.get("w").unwrap().data()[0];
            assert!(((prev - now) - 1e-3).abs() < 1e-9);
            prev = now;
        }
    }

    #[test]
    fn moments_round_trip() {
        let mut p = single(vec![1.0]);
        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        adam.update(&mut p, &single(vec![0.3])).unwrap();
        let back = Adam::from_param_set(adam.config, adam.step, &adam.to_param_set(), &p).unwrap();
        assert_eq!(back, adam);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = single(vec![1.0]);
        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        assert!(adam.update(&mut p, &single(vec![1.0, 2.0])).is_err());
    }
}
