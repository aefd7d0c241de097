use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam over a flat parameter array.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![T::zero(); n_params], v: vec![T::zero(); n_params], step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "adam state for {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2): (T, T) = (lit(c.beta1), lit(c.beta2));
        let t = self.step as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let lr: T = lit(c.lr);
        let eps: T = lit(c.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_sign_times_lr() {
        let mut adam = Adam::<f64>::new(1, AdamConfig { lr: 0.1, ..Default::default() });
        let mut p = [0.0];
        adam.step(&mut p, &[3.0]).unwrap();
        assert!((p[0] + 0.1 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::<f64>::new(3, AdamConfig::default());
        let mut p = [1.0, -2.0, 0.5];
        for _ in 0..10 {
            adam.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn two_steps_match_scalar_recurrence() {
        let (lr, b1, b2, eps, g) = (0.01f64, 0.9f64, 0.999f64, 1e-8f64, 0.7f64);
        let mut x = 2.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut adam = Adam::<f64>::new(1, AdamConfig { lr, beta1: b1, beta2: b2, eps });
        let mut p = [2.0];
        adam.step(&mut p, &[g]).unwrap();
        adam.step(&mut p, &[g]).unwrap();
        assert!((p[0] - x).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut adam = Adam::<f64>::new(2, AdamConfig::default());
        assert!(adam.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
