use crate::error::{shape_err, NnError, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    /// Zero moments sized like `params`.
    pub fn new(params: &[Tensor], learning_rate: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(NnError::Param(format!("learning rate must be non-negative, got {learning_rate}")));
        }
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            learning_rate,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.second_moment
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn apply(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return shape_err("adam", &[params.len()], &[grads.len()]);
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return shape_err("adam", p.shape(), g.shape());
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
