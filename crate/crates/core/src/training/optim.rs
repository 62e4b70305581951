use serde::{Deserialize, Serialize};

use crate::model::UNet;

/// Hyperparameters for decoupled-weight-decay Adam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// First and second moment estimates, flattened in parameter order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub params: AdamWParams,
    pub state: AdamWState,
}

impl AdamW {
    pub fn new(params: AdamWParams, num_params: usize) -> Self {
        Self {
            params,
            state: AdamWState {
                step: 0,
                m: vec![0.0; num_params],
                v: vec![0.0; num_params],
            },
        }
    }

    /// Applies one update from the gradients currently stored in `model`.
    ///
    /// Weight decay multiplies every parameter by `1 - lr * wd` before the
    /// Adam step, independently of the gradient.
    pub fn step(&mut self, model: &mut UNet) {
        let p = self.params;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - p.beta1.powi(t);
        let bc2_sqrt = (1.0 - p.beta2.powi(t)).sqrt();
        let step_size = p.learning_rate / bc1;
        let decay = 1.0 - p.learning_rate * p.weight_decay;
        let mut offset = 0;
        for param in model.params_mut() {
            let n = param.value.len();
            let m = &mut self.state.m[offset..offset + n];
            let v = &mut self.state.v[offset..offset + n];
            for (((w, &g), mi), vi) in param.value.iter_mut().zip(param.grad.iter()).zip(m).zip(v) {
                *w *= decay;
                *mi = p.beta1 * *mi + (1.0 - p.beta1) * g;
                *vi = p.beta2 * *vi + (1.0 - p.beta2) * g * g;
                let denom = vi.sqrt() / bc2_sqrt + p.epsilon;
                *w -= step_size * *mi / denom;
            }
            offset += n;
        }
        debug_assert_eq!(offset, self.state.m.len());
    }
}
