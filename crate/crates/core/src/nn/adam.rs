//! Adam optimizer with bias-corrected moment estimates.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment buffers, one pair per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(group_sizes: &[usize]) -> Self {
        AdamState {
            m: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One Adam update over matching parameter/gradient groups.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    adam_step_with(params, grads, state, lr, BETA1, BETA2, EPSILON)
}

pub fn adam_step_with(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::config(format!(
            "optimizer group counts differ: {} params, {} grads, {} state",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (group, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
        if param.len() != grad.len() || param.len() != state.m[group].len() {
            return Err(Error::config(format!(
                "optimizer group {group} size mismatch: {} params, {} grads",
                param.len(),
                grad.len()
            )));
        }
        let m = &mut state.m[group];
        let v = &mut state.v[group];
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut theta = vec![1.5f64, -2.0];
        let mut state = AdamState::new(&[2]);
        // Prime the moments with one nonzero step.
        let mut view = [theta.as_mut_slice()];
        adam_step(&mut view, &[&[0.5, -0.5]], &mut state, 0.0).unwrap();
        let m_before = state.m[0].clone();

        let mut view = [theta.as_mut_slice()];
        adam_step(&mut view, &[&[0.0, 0.0]], &mut state, 0.0).unwrap();
        assert_eq!(theta, vec![1.5, -2.0]);
        assert!(state.m[0][0].abs() < m_before[0].abs());
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // Closed form: m_hat = 1, v_hat = 1, so the update is
        // -lr / (1 + eps) which is within 1e-6 * lr of -lr.
        let lr = 0.37;
        let mut theta = vec![0.0f64];
        let mut state = AdamState::new(&[1]);
        let mut view = [theta.as_mut_slice()];
        adam_step(&mut view, &[&[1.0]], &mut state, lr).unwrap();
        assert!((theta[0] + lr).abs() < 1e-6 * lr, "moved {}", theta[0]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn trajectories_are_bit_deterministic() {
        let run = || -> Vec<f64> {
            let mut theta = vec![0.3f64, -0.7, 1.1];
            let mut state = AdamState::new(&[3]);
            for step in 0..50 {
                let g: Vec<f64> = theta.iter().map(|&x| 2.0 * x + step as f64 * 0.001).collect();
                let mut view = [theta.as_mut_slice()];
                adam_step(&mut view, &[&g], &mut state, 1e-2).unwrap();
            }
            theta
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_groups_rejected() {
        let mut theta = vec![0.0f64];
        let mut state = AdamState::new(&[2]);
        let mut view = [theta.as_mut_slice()];
        assert!(adam_step(&mut view, &[&[1.0]], &mut state, 0.1).is_err());
    }
}
