use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Gradients are read, never cleared.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Restores a saved optimizer state; moments must match `store`'s shapes.
    pub fn from_state(
        config: AdamConfig,
        store: &ParamStore,
        step: u64,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
    ) -> Result<Self> {
        if m.len() != store.len() || v.len() != store.len() {
            return Err(Error::shape("adam", "moment count differs from parameters"));
        }
        for ((p, a), b) in store.iter().zip(&m).zip(&v) {
            if p.value.shape() != a.shape() || p.value.shape() != b.shape() {
                return Err(Error::shape("adam", format!("moment shape for {}", p.name)));
            }
        }
        Ok(Self { config, step, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::shape("adam", "parameter set changed"));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.grad.shape() != m.shape() {
                return Err(Error::shape("adam", format!("grad shape for {}", p.name)));
            }
            let g = p.grad.data();
            let x = p.value.data_mut();
            for i in 0..g.len() {
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * g[i];
                let m_hat = *mi / bc1;
                let vi = &mut v.data_mut()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * g[i] * g[i];
                let v_hat = *vi / bc2;
                x[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> (ParamStore, super::super::param::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(value));
        (store, id)
    }

    #[test]
    fn first_step_moves_by_lr_regardless_of_gradient_scale() {
        for g in [1e-3, 1.0, 250.0, -7.0] {
            let (mut store, id) = single(1.0);
            store.get_mut(id).grad = Tensor::scalar(g);
            let mut adam = Adam::new(
                AdamConfig {
                    lr: 0.01,
                    ..Default::default()
                },
                &store,
            );
            adam.step(&mut store).unwrap();
            let moved = (store.get(id).value.item() - 1.0).abs();
            assert!((moved - 0.01).abs() < 1e-6, "g={g} moved {moved}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut store, id) = single(3.25);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.get(id).value.item(), 3.25);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn grads_are_not_cleared() {
        let (mut store, id) = single(0.0);
        store.get_mut(id).grad = Tensor::scalar(2.0);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store).unwrap();
        assert_eq!(store.get(id).grad.item(), 2.0);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let (mut store, id) = single(5.0);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
            &store,
        );
        for _ in 0..500 {
            let x = store.get(id).value.item();
            store.get_mut(id).grad = Tensor::scalar(2.0 * x);
            adam.step(&mut store).unwrap();
        }
        assert!(store.get(id).value.item().abs() < 1e-2);
    }
}
