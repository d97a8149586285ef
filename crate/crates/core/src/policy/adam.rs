use serde::{Deserialize, Serialize};

use super::PolicyParams;
use crate::error::{LabError, Result};

/// Adam hyperparameters. No weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        OptimizerState {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
        }
    }
}

/// One Adam descent step on `grad` (the gradient of a loss to minimize).
///
/// A non-finite gradient yields [`LabError::Divergence`] tagged with the
/// update index the step would have had.
pub fn apply_update(
    params: &PolicyParams,
    grad: &[f64],
    opt: &OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(PolicyParams, OptimizerState)> {
    let n = params.flat().len();
    if grad.len() != n || opt.first_moment.len() != n || opt.second_moment.len() != n {
        return Err(LabError::ShapeMismatch(format!(
            "gradient {} / moments {},{} for {} parameters",
            grad.len(),
            opt.first_moment.len(),
            opt.second_moment.len(),
            n
        )));
    }
    let step = opt.step_count + 1;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(LabError::Divergence {
            step: step as usize,
            detail: format!("gradient component {i} is {}", grad[i]),
        });
    }

    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let mut m = opt.first_moment.clone();
    let mut v = opt.second_moment.clone();
    let mut theta = params.flat().to_vec();
    for i in 0..n {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    let new_params =
        PolicyParams::from_flat(*params.layout(), theta).map_err(|e| LabError::Divergence {
            step: step as usize,
            detail: e.to_string(),
        })?;
    Ok((
        new_params,
        OptimizerState {
            first_moment: m,
            second_moment: v,
            step_count: step,
        },
    ))
}
