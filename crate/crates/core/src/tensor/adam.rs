use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for every tensor of one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.tensors().iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(format!(
                    "adam: param {:?} grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, pk) in p.data_mut().iter_mut().enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *pk -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// First moments then second moments, parameter order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.m
            .iter()
            .chain(&self.v)
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn from_flat(
        config: AdamConfig,
        step: u64,
        params: &ParamSet,
        flat: &[f64],
    ) -> Result<Self> {
        let n = params.numel();
        if flat.len() != 2 * n {
            return Err(Error::format(format!(
                "optimizer blob has {} values, expected {}",
                flat.len(),
                2 * n
            )));
        }
        let split = |base: &[f64]| -> Result<Vec<Tensor>> {
            let mut off = 0;
            params
                .tensors()
                .iter()
                .map(|t| {
                    let k = t.numel();
                    let out = Tensor::new(t.shape().to_vec(), base[off..off + k].to_vec());
                    off += k;
                    out
                })
                .collect()
        };
        Ok(Self {
            config,
            step,
            m: split(&flat[..n])?,
            v: split(&flat[n..])?,
        })
    }
}
