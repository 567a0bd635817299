use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Moments shaped like `params`, zero-initialized; β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &[Tensor<T>], lr: f64) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// One update. Gradients are validated before anything is mutated.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam state for {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {i}: {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(format!("parameter tensor {i}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let c1 = T::from_f64(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64(1.0 - self.beta2.powi(t));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        let one = T::one();
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
