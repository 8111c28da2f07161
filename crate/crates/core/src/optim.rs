//! Adam with bias correction.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state over one or more parameter sets updated together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    /// First and second moments, one entry per set, per tensor.
    moments: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sets: &[&ParamSet]) -> Self {
        let moments = sets
            .iter()
            .map(|s| {
                s.iter()
                    .map(|(_, t)| (alloc::vec![0.0; t.len()], alloc::vec![0.0; t.len()]))
                    .collect()
            })
            .collect();
        Self { config, step: 0, moments }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every set in `sets` (same order as construction).
    pub fn step(&mut self, lr: f64, sets: &mut [&mut ParamSet], grads: &[Vec<Tensor>]) {
        assert_eq!(sets.len(), self.moments.len(), "optimizer bound to a different set count");
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.step as f64);
        for ((set, set_grads), set_moments) in sets.iter_mut().zip(grads).zip(&mut self.moments) {
            for ((param, g), (m, v)) in set.tensors_mut().iter_mut().zip(set_grads).zip(set_moments.iter_mut()) {
                for (i, p) in param.data_mut().iter_mut().enumerate() {
                    let gi = g.data()[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    *p -= lr * mhat / (libm::sqrt(vhat) + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut set = ParamSet::new();
        set.add("w", Tensor::new(&[2], alloc::vec![1.0, -1.0]).unwrap());
        let mut adam = Adam::new(AdamConfig::default(), &[&set]);
        let g = alloc::vec![alloc::vec![Tensor::new(&[2], alloc::vec![3.0, -0.5]).unwrap()]];
        adam.step(0.1, &mut [&mut set], &g);
        let w = set.get(0).data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut set = ParamSet::new();
        set.add("w", Tensor::scalar(5.0));
        let mut adam = Adam::new(AdamConfig { beta1: 0.9, ..Default::default() }, &[&set]);
        for _ in 0..2000 {
            let g = 2.0 * (set.get(0).item() - 2.0);
            adam.step(0.05, &mut [&mut set], &[alloc::vec![Tensor::scalar(g)]]);
        }
        assert!((set.get(0).item() - 2.0).abs() < 1e-3);
    }
}
