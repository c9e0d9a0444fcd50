//! AdamW: Adam moments with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, dim: usize) -> Self {
        Self {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step_count: 0,
        }
    }

    /// Zeroes both moments and the step counter.
    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.step_count = 0;
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One update `theta <- theta - lr m_hat / (sqrt(v_hat) + eps) - lr wd theta`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer built for dim {}, got theta {} and grad {}",
                self.m.len(),
                theta.len(),
                grad.len()
            )));
        }
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient coordinate {k} is {} at step {}",
                grad[k],
                self.step_count + 1
            )));
        }
        let c = self.config;
        self.step_count += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step_count as i32);
        for k in 0..theta.len() {
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * grad[k];
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            theta[k] -= c.lr * m_hat / (v_hat.sqrt() + c.eps) + c.lr * c.weight_decay * theta[k];
        }
        Ok(())
    }
}

/// Runs `k` optimizer steps. `loss_and_grad` evaluates the loss at `theta`
/// and writes the gradient into its second argument. Returns the final
/// parameters and the loss of the last evaluated iterate.
pub fn run_k_steps<F>(
    theta0: Vec<f64>,
    mut loss_and_grad: F,
    k: usize,
    state: &mut AdamW,
) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    if k == 0 {
        return Err(Error::InvalidArgument("run_k_steps needs k >= 1".into()));
    }
    let mut theta = theta0;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = f64::NAN;
    for _ in 0..k {
        grad.iter_mut().for_each(|g| *g = 0.0);
        loss = loss_and_grad(&theta, &mut grad)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss is {loss} at step {}",
                state.step_count() + 1
            )));
        }
        state.step(&mut theta, &grad)?;
    }
    Ok((theta, loss))
}
