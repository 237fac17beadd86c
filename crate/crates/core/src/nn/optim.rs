//! First-order optimizers over [`ParamSet`]s.

use serde::{Deserialize, Serialize};

use crate::tensor::ParamSet;

/// Learning rate multiplied by `gamma` every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub base: f64,
    pub gamma: f64,
    pub every: usize,
}

impl StepDecay {
    pub fn at_epoch(&self, epoch: usize) -> f64 {
        self.base * self.gamma.powi((epoch / self.every.max(1)) as i32)
    }
}

pub trait Optimizer {
    /// Applies one update to `params` given `grads` at learning rate `lr`.
    fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64);
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μv + (g + λθ)`, `θ ← θ − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: ParamSet,
}

impl Sgd {
    pub fn new(params: &ParamSet, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: params.zeros_like(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) {
        for ((p, g), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.velocity.tensors_mut())
        {
            for i in 0..p.data.len() {
                let gi = g.data[i] + self.weight_decay * p.data[i];
                v.data[i] = self.momentum * v.data[i] + gi;
                p.data[i] -= lr * v.data[i];
            }
        }
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub first: ParamSet,
    pub second: ParamSet,
    pub steps: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, weight_decay: f64) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) {
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut())
        {
            for i in 0..p.data.len() {
                let gi = g.data[i] + self.weight_decay * p.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
