//! Adam parameter updates on the flat parameter vector.

use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use crate::error::{Error, Result};

/// First and second gradient moments, carried across steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    /// Number of updates applied so far.
    pub step: u64,
    /// Exponential moving average of gradients.
    pub m: Vec<f64>,
    /// Exponential moving average of squared gradients.
    pub v: Vec<f64>,
}

impl AdamState {
    /// Fresh state for `n_params` parameters.
    pub fn new(n_params: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One Adam update in place.
///
/// Moments are bias-corrected; the stabilizer is added after the square
/// root: `p -= lr * m_hat / (sqrt(v_hat) + epsilon)`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    config.validate()?;
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer saw {} params, {} grads, state of {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("gradient entry {i}"),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_hand_computation() {
        // With any gradient g, bias correction makes m_hat = g and
        // v_hat = g^2 on step one, so the update is lr * g / (|g| + eps).
        let config = TrainConfig::default();
        let mut params = vec![1.0, -2.0];
        let grads = vec![0.5, -0.25];
        let mut state = AdamState::new(2);
        adam_step(&mut params, &grads, &mut state, &config).unwrap();
        let expected0 = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        let expected1 = -2.0 - 1e-3 * (-0.25) / (0.25 + 1e-8);
        assert_eq!(params, vec![expected0, expected1]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let config = TrainConfig::default();
        let mut params = vec![0.3, -0.7, 4.0];
        let before = params.clone();
        let mut state = AdamState::new(3);
        for _ in 0..5 {
            adam_step(&mut params, &[0.0, 0.0, 0.0], &mut state, &config).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn constant_gradient_keeps_unit_scale_steps() {
        // With a constant gradient, m_hat / sqrt(v_hat) stays ~sign(g), so
        // each step moves by about lr regardless of gradient magnitude.
        let config = TrainConfig::default();
        for &g in &[1e-4, 1.0, 1e4] {
            let mut params = vec![0.0];
            let mut state = AdamState::new(1);
            for _ in 0..10 {
                adam_step(&mut params, &[g], &mut state, &config).unwrap();
            }
            let moved = -params[0];
            assert!(
                (moved - 10.0 * config.learning_rate).abs() < 1e-6,
                "gradient {g} moved {moved}"
            );
        }
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let config = TrainConfig::default();
        let mut params = vec![0.0; 3];
        let mut state = AdamState::new(3);
        assert!(adam_step(&mut params, &[0.0; 2], &mut state, &config).is_err());
        let mut short_state = AdamState::new(2);
        assert!(adam_step(&mut params, &[0.0; 3], &mut short_state, &config).is_err());
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let config = TrainConfig::default();
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        let err = adam_step(&mut params, &[f64::NAN], &mut state, &config).unwrap_err();
        assert!(matches!(err, crate::Error::NonFinite { .. }));
        assert_eq!(state.step, 0);
    }
}
