//! Adam with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.dims()))
            .collect();
        AdamState {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// `p <- p - lr*wd*p`, then the bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return param_err(format!(
                "adam: {} moment slots, {} params, {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.dims() != g.dims() || p.dims() != m.dims() {
                return param_err(format!(
                    "adam: shape mismatch {:?} / {:?} / {:?}",
                    p.dims(),
                    g.dims(),
                    m.dims()
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let pd = p.data_mut();
            let gd = grads[i].data();
            let md = self.m[i].data_mut();
            let vd = self.v[i].data_mut();
            for k in 0..pd.len() {
                pd[k] -= c.lr * c.weight_decay * pd[k];
                md[k] = c.beta1 * md[k] + (1.0 - c.beta1) * gd[k];
                vd[k] = c.beta2 * vd[k] + (1.0 - c.beta2) * gd[k] * gd[k];
                let mh = md[k] / bc1;
                let vh = vd[k] / bc2;
                pd[k] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

impl AdamState {
    /// Rounds the moment estimates to f32, the on-disk precision.
    pub fn round_to_storage(&mut self) {
        self.m
            .iter_mut()
            .chain(self.v.iter_mut())
            .for_each(Tensor::round_to_f32);
    }
}
