//! Adam optimizer with bias-corrected first and second moments.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug)]
pub struct AdamState {
    params: AdamParams,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl AdamState {
    /// Builds moment buffers sized to the given parameter tensors.
    pub fn new(params: AdamParams, tensors: &[&Tensor]) -> Self {
        AdamState {
            params,
            first: tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            second: tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn params(&self) -> &AdamParams {
        &self.params
    }

    /// Applies one update to every tensor from its accumulated gradient.
    /// Tensors must arrive in the same order as at construction.
    pub fn step(&mut self, tensors: &mut [&mut Tensor]) {
        assert_eq!(tensors.len(), self.first.len(), "parameter set changed");
        self.steps += 1;
        let t = self.steps as f64;
        let bias1 = 1.0 - self.params.beta1.powf(t);
        let bias2 = 1.0 - self.params.beta2.powf(t);
        for (slot, tensor) in tensors.iter_mut().enumerate() {
            let m = &mut self.first[slot];
            let v = &mut self.second[slot];
            let grads = tensor.grad_mut().to_vec();
            let values = tensor.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                m[i] = self.params.beta1 * m[i] + (1.0 - self.params.beta1) * g;
                v[i] = self.params.beta2 * v[i] + (1.0 - self.params.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                values[i] -=
                    self.params.learning_rate * m_hat / (v_hat.sqrt() + self.params.epsilon);
            }
        }
    }
}
