use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self { config, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn update<T: Real>(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - libm_pow(beta1, self.step);
        let bc2 = 1.0 - libm_pow(beta2, self.step);
        let step_size = lr / bc1;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let g = g.as_f64();
            let mm = beta1 * *m as f64 + (1.0 - beta1) * g;
            let vv = beta2 * *v as f64 + (1.0 - beta2) * g * g;
            *m = mm as f32;
            *v = vv as f32;
            let denom = num_traits::Float::sqrt(vv / bc2) + eps;
            *p = *p - T::from_f64(step_size * mm / denom);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.1, momentum: 0.9, weight_decay: 5e-4 }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub config: SgdConfig,
    pub step: u64,
    pub velocity: Vec<f32>,
}

impl Sgd {
    pub fn new(config: SgdConfig, n: usize) -> Self {
        Self { config, step: 0, velocity: vec![0.0; n] }
    }

    pub fn update<T: Real>(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.step += 1;
        let SgdConfig { momentum, weight_decay, .. } = self.config;
        for ((p, &g), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let d = g.as_f64() + weight_decay * p.as_f64();
            let v = momentum * *vel as f64 + d;
            *vel = v as f32;
            *p = *p - T::from_f64(lr * v);
        }
    }
}

/// Step decay: the base rate is multiplied by `gamma` at each milestone passed.
pub fn milestone_lr(base: f64, step: u64, milestones: &[u64], gamma: f64) -> f64 {
    milestones.iter().filter(|&&m| step >= m).fold(base, |lr, _| lr * gamma)
}

fn libm_pow(base: f64, exp: u64) -> f64 {
    num_traits::Float::powi(base, exp.min(i32::MAX as u64) as i32)
}
