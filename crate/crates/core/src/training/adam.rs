use alloc::format;

use serde::{Deserialize, Serialize};

use crate::field::ParamStore;
use crate::linalg::sqrt;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moments with the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: ParamStore,
    pub v: ParamStore,
    pub step: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        Adam { config, m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    /// One bias-corrected update of `params` with learning rate `lr`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64) -> Result<()> {
        if !grads.same_layout(params) || !self.m.same_layout(params) {
            return Err(Error::Dimension("optimizer state, gradients and parameters differ in layout".into()));
        }
        if let Some(t) = grads.tensors().iter().find(|t| t.data.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite(format!("gradient of {}", t.name)));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - powi(beta1, self.step);
        let c2 = 1.0 - powi(beta2, self.step);
        for id in 0..params.len() {
            let g = grads.data(id);
            let m = self.m.data_mut(id);
            for (m, g) in m.iter_mut().zip(g.iter()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
            }
            let v = self.v.data_mut(id);
            for (v, g) in v.iter_mut().zip(g.iter()) {
                *v = beta2 * *v + (1.0 - beta2) * g * g;
            }
            let (m, v) = (self.m.data(id), self.v.data(id));
            for ((p, m), v) in params.data_mut(id).iter_mut().zip(m.iter()).zip(v.iter()) {
                *p -= lr * (m / c1) / (sqrt(v / c2) + epsilon);
            }
        }
        Ok(())
    }
}

fn powi(x: f64, n: u64) -> f64 {
    libm::pow(x, n as f64)
}

/// Linearly decaying learning rate reaching zero after `total` epochs.
pub fn linear_decay(lr: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return lr;
    }
    lr * (1.0 - epoch as f64 / total as f64).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar(x: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.push("x", &[1], vec![x]);
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.5, -7.0] {
            let mut p = scalar(2.0);
            let mut adam = Adam::new(&p, AdamConfig::default());
            adam.step(&mut p, &scalar(g), 0.01).unwrap();
            assert!(((2.0 - p.data(0)[0]).abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_moments() {
        let mut p = scalar(1.0);
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.step(&mut p, &scalar(1.0), 0.1).unwrap();
        let (before, m, v) = (p.data(0)[0], adam.m.data(0)[0], adam.v.data(0)[0]);
        let mut q = p.clone();
        let mut frozen = adam.clone();
        frozen.step(&mut q, &scalar(0.0), 0.0).unwrap();
        assert_eq!(q.data(0)[0], before);
        assert!((frozen.m.data(0)[0] - 0.9 * m).abs() < 1e-15);
        assert!((frozen.v.data(0)[0] - 0.999 * v).abs() < 1e-15);
    }

    #[test]
    fn three_step_trace_matches_hand_computation() {
        let mut p = scalar(0.0);
        let mut adam = Adam::new(&p, AdamConfig::default());
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            adam.step(&mut p, &scalar(1.0), 0.1).unwrap();
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p.data(0)[0] - x).abs() < 1e-14);
        }
        assert!((x + 0.3).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = scalar(0.0);
        let mut adam = Adam::new(&p, AdamConfig::default());
        assert!(matches!(adam.step(&mut p, &scalar(f64::NAN), 0.1), Err(Error::NonFinite(_))));
    }
}
