use std::collections::HashMap;

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::graph::Tensor;
use crate::params::ParameterSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    moments: HashMap<String, (Tensor, Tensor)>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            moments: HashMap::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`. Frozen parameters and parameters
    /// without a gradient are left untouched, bit for bit.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &HashMap<String, Tensor>, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for p in params.iter_mut() {
            if p.frozen {
                continue;
            }
            let Some(g) = grads.get(&p.name) else { continue };
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (Tensor::zeros(p.value.raw_dim()), Tensor::zeros(p.value.raw_dim())));
            Zip::from(&mut p.value).and(m).and(v).and(g).for_each(|w, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{BlockTag, Parameter};
    use ndarray::array;

    fn set(frozen: bool) -> ParameterSet {
        let mut ps = ParameterSet::new();
        ps.push(Parameter {
            name: "w".into(),
            value: array![1.0, -2.0].into_dyn(),
            tag: BlockTag::Rnn(1),
            frozen,
        })
        .unwrap();
        ps
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first step is lr · g/|g| (up to eps).
        let mut ps = set(false);
        let grads = HashMap::from([("w".to_string(), array![0.5, -3.0].into_dyn())]);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut ps, &grads, 0.1);
        let w = &ps.get("w").unwrap().value;
        assert!((w[[0]] - 0.9).abs() < 1e-6);
        assert!((w[[1]] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn frozen_untouched() {
        let mut ps = set(true);
        let before = ps.clone();
        let grads = HashMap::from([("w".to_string(), array![0.5, -3.0].into_dyn())]);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            opt.step(&mut ps, &grads, 0.1);
        }
        assert_eq!(ps, before);
    }
}
