//! ADAM optimizer over a flat parameter vector with bias correction.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{DsiError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !ok {
            return Err(DsiError::config(format!(
                "invalid ADAM hyperparameters: lr {}, beta1 {}, beta2 {}, epsilon {}",
                self.learning_rate, self.beta1, self.beta2, self.epsilon
            )));
        }
        Ok(())
    }
}

/// First- and second-moment accumulators shaped like the flat parameter
/// vector, plus the step count used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    cfg: AdamConfig,
    step: u64,
    m: DVector<S>,
    v: DVector<S>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        if n_params == 0 {
            return Err(DsiError::config("ADAM needs at least one parameter"));
        }
        Ok(Self { cfg, step: 0, m: DVector::zeros(n_params), v: DVector::zeros(n_params) })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Replaces the learning rate for subsequent steps; moments and the
    /// step count are untouched, so bias correction continues seamlessly.
    pub fn set_learning_rate(&mut self, learning_rate: f64) -> Result<()> {
        let next = AdamConfig { learning_rate, ..self.cfg };
        next.validate()?;
        self.cfg = next;
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One ADAM update in place:
    /// m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2,
    /// w <- w - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + epsilon).
    pub fn step(&mut self, w: &mut DVector<S>, grad: &DVector<S>) -> Result<()> {
        if w.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(DsiError::schema(format!(
                "ADAM state holds {} parameters, got weights {} and gradient {}",
                self.m.len(),
                w.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let b1 = S::of_f64(self.cfg.beta1);
        let b2 = S::of_f64(self.cfg.beta2);
        let lr = S::of_f64(self.cfg.learning_rate);
        let eps = S::of_f64(self.cfg.epsilon);
        let one = S::one();
        let corr1 = one - b1.powi(self.step as i32);
        let corr2 = one - b2.powi(self.step as i32);
        for p in 0..self.m.len() {
            let g = grad[p];
            self.m[p] = b1 * self.m[p] + (one - b1) * g;
            self.v[p] = b2 * self.v[p] + (one - b2) * g * g;
            let m_hat = self.m[p] / corr1;
            let v_hat = self.v[p] / corr2;
            w[p] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
