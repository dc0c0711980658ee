use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are allocated lazily on the
/// first step and indexed by parameter position.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// One update of every parameter with learning rate `lr`; gradients are
    /// consumed (cleared) afterwards.
    pub fn step(&mut self, params: &[Tensor<T>], lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || params.iter().zip(&self.m).any(|(p, m)| p.len() != m.len()) {
            return Err(Error::Graph("parameter list changed between Adam steps".into()));
        }
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::Graph(format!("parameter {i} has no gradient")));
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let correct1 = T::of(1.0 - beta1.powi(t));
        let correct2 = T::of(1.0 - beta2.powi(t));
        let (b1, b2, eps, lr) = (T::of(beta1), T::of(beta2), T::of(epsilon), T::of(lr));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);

        for ((param, m), v) in params.iter().zip(&mut self.m).zip(&mut self.v) {
            let grad = param.take_grad().expect("checked above");
            param.update(|values| {
                for (((w, &g), m), v) in values.iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    let m_hat = *m / correct1;
                    let v_hat = *v / correct2;
                    *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}
