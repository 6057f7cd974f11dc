//! Adam with decoupled weight decay.

use indexmap::IndexMap;

use crate::diffcore::Array;
use crate::error::{Error, Result};
use crate::model::Tensors;

pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state. Only parameters that have been passed a gradient own
/// moments; frozen parameters are never touched.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    state: IndexMap<String, Moments>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            state: IndexMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn has_state(&self, name: &str) -> bool {
        self.state.contains_key(name)
    }

    /// One update of every parameter named in `grads`:
    /// `p ← p − lr·λ·p`, then the bias-corrected Adam step.
    pub fn step(&mut self, params: &mut Tensors, grads: &IndexMap<String, Array>) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::contract(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::contract(format!(
                    "{name}: gradient shape {:?} vs parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            let decay = self.lr * self.weight_decay;
            for (((x, &gi), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(&mut st.m)
                .zip(&mut st.v)
            {
                *x -= decay * *x;
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *x -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
        Ok(())
    }
}
