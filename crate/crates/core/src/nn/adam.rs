use crate::error::{Error, Result};

use super::network::Network;
use super::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a fixed list of parameter buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let (first, second) = sizes
            .into_iter()
            .map(|n| (vec![T::zero(); n], vec![T::zero(); n]))
            .unzip();
        Self {
            config,
            first,
            second,
            step: 0,
        }
    }

    pub fn for_network(config: AdamConfig, net: &Network<T>) -> Self {
        Self::new(config, net.parameters().map(|p| p.len()))
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.second
    }

    /// One bias-corrected Adam update. Fails without touching any parameter
    /// if a gradient is non-finite.
    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.first).enumerate() {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::Shape(format!("tensor {i}: length mismatch")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in tensor {i}")));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - c.beta1.powi(t);
        let correction2 = 1.0 - c.beta2.powi(t);
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let lr = T::from_f64_lossy(c.lr);
        let inv_c1 = T::from_f64_lossy(1.0 / correction1);
        let inv_c2 = T::from_f64_lossy(1.0 / correction2);
        let eps = T::from_f64_lossy(c.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] * inv_c1;
                let v_hat = v[i] * inv_c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Applies the accumulated gradients of `net`.
    pub fn step(&mut self, net: &mut Network<T>) -> Result<()> {
        let mut params = Vec::new();
        let mut grads = Vec::new();
        for tensor in net.parameters_mut() {
            let (p, g) = tensor.data_and_grad_mut();
            let g: &[T] = g;
            params.push(p);
            grads.push(g);
        }
        self.update(&mut params, &grads)
    }
}
