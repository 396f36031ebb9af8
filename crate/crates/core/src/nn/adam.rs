use serde::{Deserialize, Serialize};

use super::param::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one optimiser. Coordinates that never receive a
/// gradient keep zero moments and are left untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update of `params` along `grad`.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        params.check_same_layout(grad)?;
        if self.m.len() != params.len() {
            return Err(Error::Layout(format!(
                "optimiser sized for {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        if let Some(seg) = grad.first_non_finite() {
            return Err(Error::NonFinite(format!("gradient segment `{seg}`")));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        let p = params.values_mut();
        for (((pi, &g), m), v) in p.iter_mut().zip(grad.values()).zip(&mut self.m).zip(&mut self.v) {
            if g == 0.0 && *m == 0.0 && *v == 0.0 {
                continue;
            }
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
