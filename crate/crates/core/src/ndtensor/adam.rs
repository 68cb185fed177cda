use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Adam hyperparameters plus the linear warmup fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub warmup: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            warmup: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Learning rate at `global_step`: linear ramp from 0 over the first
    /// `warmup · total_steps` steps, then constant.
    pub fn effective_lr(&self, global_step: usize, total_steps: usize) -> f64 {
        let warm = self.warmup * total_steps as f64;
        if warm <= 0.0 {
            return self.lr;
        }
        self.lr * (global_step as f64 / warm).min(1.0)
    }
}

/// Per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        Self {
            config,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every parameter that requires a
    /// gradient. Returns the learning rate that was applied.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        global_step: usize,
        total_steps: usize,
    ) -> Result<f64, TensorError> {
        if params.len() != self.m.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                left: vec![self.m.len()],
                right: vec![params.len()],
            });
        }
        if let Some(i) = params
            .iter()
            .position(|p| p.requires_grad() && p.grad().is_none())
        {
            return Err(TensorError::MissingGrad(i));
        }
        let lr = self.config.effective_lr(global_step, total_steps);
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let eps = T::lit(self.config.eps);
        let lr_t = T::lit(lr);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.requires_grad() {
                continue;
            }
            let g = p.grad().expect("checked above").to_vec();
            for (((w, mi), vi), gi) in p.values_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(lr)
    }

    /// Grows the buffers of parameter `index` after rows were appended to it.
    pub fn resize_param(&mut self, index: usize, len: usize) {
        self.m[index].resize(len, T::zero());
        self.v[index].resize(len, T::zero());
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    state: &mut AdamState<T>,
    global_step: usize,
    total_steps: usize,
) -> Result<f64, TensorError> {
    state.step(params, global_step, total_steps)
}
