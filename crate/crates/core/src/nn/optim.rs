use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore, TensorRole};

/// Adaptive-moment optimizer. `adaptive_cnn` folds weight decay into the
/// gradient; `adaptive_decoupled_wd` applies it directly to the weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    AdaptiveCnn,
    AdaptiveDecoupledWd,
}

#[derive(Clone, Debug)]
pub struct Adam {
    kind: OptimizerKind,
    weight_decay: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(kind: OptimizerKind, weight_decay: f32, store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| {
            s.entries()
                .iter()
                .map(|e| if e.role.is_learnable() { vec![0.0; e.numel()] } else { Vec::new() })
                .collect::<Vec<_>>()
        };
        Self {
            kind,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f32) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, entry) in store.entries_mut().iter_mut().enumerate() {
            if !entry.role.is_learnable() {
                continue;
            }
            let decay = if entry.role == TensorRole::Weight { self.weight_decay } else { 0.0 };
            let g = &grads.slots()[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..entry.value.len() {
                let mut gj = g[j];
                if self.kind == OptimizerKind::AdaptiveCnn {
                    gj += decay * entry.value[j];
                }
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                if self.kind == OptimizerKind::AdaptiveDecoupledWd {
                    entry.value[j] -= lr * decay * entry.value[j];
                }
                entry.value[j] -= lr * update;
            }
        }
    }
}
