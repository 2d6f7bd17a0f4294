use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Params;
use crate::Tensor;

/// Adaptive-moment optimizer with global gradient-norm clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients whose global L2 norm exceeds this are rescaled to it.
    pub clip_norm: Option<f64>,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update; returns the pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, Tensor>) -> f64 {
        let norm = grads
            .values()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let n = p.len();
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi * scale;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        norm
    }
}
