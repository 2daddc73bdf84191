//! Bias-corrected Adam.

use thiserror::Error;

use crate::graph::Gradients;
use crate::tensor::Tensor;

pub const DEFAULT_LEARNING_RATE: f64 = 5e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdamError {
    #[error("non-finite gradient; step {step} skipped")]
    NonFiniteGradient { step: u64 },
    #[error("gradient/parameter shape mismatch at parameter {index}")]
    Shape { index: usize },
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor], learning_rate: f64) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.shape().to_vec());
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. A non-finite gradient leaves both the
    /// parameters and the optimizer state untouched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &Gradients) -> Result<(), AdamError> {
        if params.len() != grads.per_param.len() || params.len() != self.first.len() {
            return Err(AdamError::Shape { index: params.len().min(grads.per_param.len()) });
        }
        for (i, (p, g)) in params.iter().zip(&grads.per_param).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(AdamError::Shape { index: i });
            }
        }
        if !grads.is_finite() {
            return Err(AdamError::NonFiniteGradient { step: self.step + 1 });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(&grads.per_param)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
