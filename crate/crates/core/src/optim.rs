//! AdamW with decoupled weight decay, and the learning-rate schedule.

use std::f64::consts::PI;

use qtensor::Tensor;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub t: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, num_params: usize) -> Self {
        Self {
            cfg,
            t: 0,
            m: vec![None; num_params],
            v: vec![None; num_params],
        }
    }

    /// One update: `θ ← θ(1 − lr·λ)`, then the bias-corrected Adam step.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) -> Result<()> {
        for (id, g) in grads {
            if !g.is_finite() {
                return Err(Error::Invalid(format!("non-finite gradient for {}", store.name(*id))));
            }
        }
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (id, g) in grads {
            let shape = g.shape().to_vec();
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(&shape));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(&shape));
            let p = store.get_mut(*id);
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *x *= 1.0 - lr * c.weight_decay;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *x -= lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup over `warmup_fraction` of the run, then cosine decay to 0.
pub fn learning_rate(step: usize, total: usize, base: f64, warmup_fraction: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let warm = (warmup_fraction * total as f64).ceil() as usize;
    if step < warm {
        return base * (step + 1) as f64 / warm as f64;
    }
    let span = (total - warm).max(1) as f64;
    let progress = ((step - warm) as f64 / span).min(1.0);
    base * 0.5 * (1.0 + (PI * progress).cos())
}
