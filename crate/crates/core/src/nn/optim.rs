use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplicative decay per `decay_steps` steps; 1.0 disables decay.
    pub decay: f64,
    pub decay_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.95,
            decay_steps: 1000,
        }
    }
}

impl AdamConfig {
    pub fn constant(lr: f64) -> Self {
        Self {
            base_lr: lr,
            decay: 1.0,
            ..Self::default()
        }
    }

    /// Continuous exponential decay: `base_lr * decay^(t / decay_steps)`.
    pub fn lr_at(&self, t: u64) -> f64 {
        self.base_lr * self.decay.powf(t as f64 / self.decay_steps as f64)
    }
}

/// Learning rate of the default schedule at step `t`.
pub fn lr_at(t: u64) -> f64 {
    AdamConfig::default().lr_at(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &[&Vec<f64>]) -> Self {
        let lens: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(config, &lens)
    }

    /// One bias-corrected update at `lr_at(t)`, then `t += 1`. Rejects
    /// non-finite gradients before touching any state.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Shape(format!("tensor {i} changed size")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    step: self.t,
                    term: format!("gradient of tensor {i}"),
                });
            }
        }
        let c = self.config;
        let lr = c.lr_at(self.t);
        let t1 = (self.t + 1) as i32;
        let bc1 = 1.0 - c.beta1.powi(t1);
        let bc2 = 1.0 - c.beta2.powi(t1);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        self.t += 1;
        Ok(())
    }
}
