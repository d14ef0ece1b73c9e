//! Adam over raw parameter vectors, plus the central-difference gradient
//! oracle the gradient tests compare against.

use crate::effects::{ParamVector, PARAM_COUNT};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct OptimConfig {
    pub lr: f64,
    pub steps: usize,
    /// Seed of whatever stochastic sampling fed the objective, if any.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct OptimRun {
    /// Iterate after each step; the last entry is the final point.
    pub trajectory: Vec<ParamVector>,
    /// Loss evaluated at the pre-update point of each step.
    pub losses: Vec<f64>,
    pub config: OptimConfig,
    pub final_theta: ParamVector,
}

/// Minimise `objective` from `theta0` with bias-corrected Adam. The loop is
/// deterministic: identical inputs give bit-identical trajectories.
pub fn adam_minimize<F>(
    mut objective: F,
    theta0: &ParamVector,
    steps: usize,
    lr: f64,
) -> Result<OptimRun>
where
    F: FnMut(&ParamVector) -> Result<(f64, Vec<f64>)>,
{
    if steps == 0 {
        return Err(Error::ZeroSteps);
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate {lr} must be positive"
        )));
    }

    let mut theta = theta0.clone();
    let mut m = vec![0.0; PARAM_COUNT];
    let mut v = vec![0.0; PARAM_COUNT];
    let mut trajectory = Vec::with_capacity(steps);
    let mut losses = Vec::with_capacity(steps);

    for step in 1..=steps {
        let (loss, grad) = objective(&theta)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteAtStep { what: "loss", step });
        }
        if grad.len() != PARAM_COUNT {
            return Err(Error::ParamCount {
                expected: PARAM_COUNT,
                got: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteAtStep {
                what: "gradient",
                step,
            });
        }
        losses.push(loss);

        let bc1 = 1.0 - BETA1.powi(step as i32);
        let bc2 = 1.0 - BETA2.powi(step as i32);
        {
            let raw = theta.raw_mut();
            for k in 0..PARAM_COUNT {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * grad[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * grad[k] * grad[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                raw[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        trajectory.push(theta.clone());
    }

    Ok(OptimRun {
        final_theta: theta,
        trajectory,
        losses,
        config: OptimConfig {
            lr,
            steps,
            seed: None,
        },
    })
}

/// Central differences per coordinate: 2M objective evaluations.
pub fn fd_gradient<F>(mut objective: F, theta: &ParamVector, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step {h} must be positive"
        )));
    }
    let mut grad = vec![0.0; PARAM_COUNT];
    for k in 0..PARAM_COUNT {
        let mut tp = theta.clone();
        tp.raw_mut()[k] += h;
        let mut tm = theta.clone();
        tm.raw_mut()[k] -= h;
        let up = objective(&tp)?;
        let dn = objective(&tm)?;
        if !up.is_finite() || !dn.is_finite() {
            return Err(Error::NonFinite("objective value"));
        }
        grad[k] = (up - dn) / (2.0 * h);
    }
    Ok(grad)
}
