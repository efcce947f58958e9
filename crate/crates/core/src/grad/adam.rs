use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected ADAM moments for an ordered list of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    /// Fresh state with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas<'a>(
        params: impl IntoIterator<Item = &'a Tensor>,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        let first: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        let second = first.clone();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first,
            second,
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// One update. `params[i]` pairs with `grads[i]`; names are only used in
    /// diagnostics. Nothing is modified when validation fails.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor)], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, ((name, p), g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::Shape(format!(
                    "adam: parameter {name} has shape {:?}, gradient {:?}, moments {:?}",
                    p.shape(),
                    g.shape(),
                    self.first[i].shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_advances_step() {
        let mut p = Tensor::vector(vec![0.5, -2.0]);
        let mut state = AdamState::new([&p]);
        state
            .step(&mut [("p", &mut p)], &[Tensor::zeros(&[2])], 0.005)
            .unwrap();
        assert_eq!(p.data(), &[0.5, -2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t=1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        let mut p = Tensor::scalar(0.0);
        let mut state = AdamState::new([&p]);
        state.step(&mut [("p", &mut p)], &[Tensor::scalar(1.0)], 0.005).unwrap();
        let expected = -0.005 * 1.0 / (1.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn two_steps_follow_recurrence() {
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.005);
        let mut expected = 0.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            expected -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        let mut p = Tensor::scalar(0.0);
        let mut state = AdamState::new([&p]);
        for _ in 0..2 {
            state.step(&mut [("p", &mut p)], &[Tensor::scalar(1.0)], lr).unwrap();
        }
        assert!((p.item() - expected).abs() < 1e-15);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::vector(vec![0.0; 3]);
        let mut state = AdamState::new([&p]);
        let err = state
            .step(&mut [("w", &mut p)], &[Tensor::zeros(&[2])], 0.01)
            .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert_eq!(state.step, 0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Tensor::vector(vec![0.0; 2]);
        let mut state = AdamState::new([&p]);
        let err = state
            .step(&mut [("w_y", &mut p)], &[Tensor::vector(vec![1.0, f64::NAN])], 0.01)
            .unwrap_err();
        assert!(err.to_string().contains("w_y"), "{err}");
        assert_eq!(p.data(), &[0.0, 0.0]);
    }
}
