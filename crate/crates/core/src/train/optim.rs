//! AdamW with decoupled weight decay and the warmup-then-linear-decay
//! learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::Gradients;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every trainable parameter that received a gradient. Frozen
    /// parameters are never touched. Weight decay applies only to parameters
    /// registered with `decay = true` (weights, not biases or norms).
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        let ids: Vec<ParamId> = store.trainable().collect();
        let updates: Vec<(ParamId, &Tensor)> = ids.iter().filter_map(|&id| grads.param(store, id).map(|g| (id, g))).collect();
        for &(id, g) in &updates {
            if let Some(index) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    name: store.get(id).name.clone(),
                    index,
                });
            }
        }
        let updates: Vec<(ParamId, Tensor)> = updates.into_iter().map(|(id, g)| (id, g.clone())).collect();
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        for (id, g) in updates {
            let decay = store.get(id).decay;
            let (m, v) = self.moments[id.index()].get_or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let p = store.value_mut(id).data_mut();
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                let mut update = m_hat / (v_hat.sqrt() + c.eps);
                if decay {
                    update += c.weight_decay * *p;
                }
                *p -= lr * update;
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 over `round(ratio · T)` steps, then linear decay to
/// 0 at step `T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, total_steps: usize, warmup_ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&warmup_ratio) {
            return Err(Error::Config(format!("warmup ratio {warmup_ratio} outside [0, 1]")));
        }
        if total_steps == 0 || peak.is_nan() || peak <= 0.0 {
            return Err(Error::Config("learning rate and step count must be positive".into()));
        }
        Ok(Self {
            peak,
            total_steps,
            warmup_steps: (warmup_ratio * total_steps as f64).round() as usize,
        })
    }

    /// Learning rate for 0-based step `t`.
    pub fn lr(&self, t: usize) -> f64 {
        let (w, total) = (self.warmup_steps, self.total_steps);
        if t < w {
            self.peak * t as f64 / w as f64
        } else if t >= total {
            0.0
        } else {
            self.peak * (total - t) as f64 / (total - w) as f64
        }
    }
}
