//! Adam and the step-decay learning-rate schedule.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::params::ParamStore;

/// Multiplies the base rate by `gamma` every `step_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub base: f64,
    pub gamma: f64,
    pub step_epochs: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self {
            base: 1e-3,
            gamma: 0.2,
            step_epochs: 5,
        }
    }
}

impl StepDecay {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.step_epochs == 0 {
            return self.base;
        }
        self.base * self.gamma.powi((epoch / self.step_epochs) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub step: u64,
    pub moments: BTreeMap<String, AdamMoments>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one bias-corrected update to every parameter of `store` using
    /// the gradients currently held in the store.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in store.params_mut() {
            if !p.requires_grad {
                continue;
            }
            let st = self.moments.entry(name.clone()).or_insert_with(|| AdamMoments {
                m: vec![0.0; p.values.len()],
                v: vec![0.0; p.values.len()],
            });
            for i in 0..p.values.len() {
                let g = p.grad[i];
                st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g;
                st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g * g;
                let mhat = st.m[i] / c1;
                let vhat = st.v[i] / c2;
                p.values[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
