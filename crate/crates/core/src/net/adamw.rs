//! AdamW: Adam with decoupled weight decay.
//!
//! Update rule per parameter, with bias-corrected moments:
//!
//! ```text
//! m = b1*m + (1-b1)*g        m_hat = m / (1 - b1^t)
//! v = b2*v + (1-b2)*g^2      v_hat = v / (1 - b2^t)
//! theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta
//! ```
//!
//! The decay term multiplies the pre-update parameter value, decoupled from
//! the gradient direction.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::net::{NetworkState, ParamGrads};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamWConfig {
            lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Param {
                name: "lr",
                value: self.lr,
                requirement: "must be > 0",
            });
        }
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&value) {
                return Err(Error::Param {
                    name: if name == "beta1" { "beta1" } else { "beta2" },
                    value,
                    requirement: "must lie in [0,1)",
                });
            }
        }
        Ok(())
    }
}

/// One AdamW update on a single parameter tensor. `t` is the 1-based step.
pub fn adamw_step(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &AdamWConfig,
    t: u64,
) -> Result<()> {
    cfg.validate()?;
    if grad.len() != param.len() || m.len() != param.len() || v.len() != param.len() {
        return Err(Error::Config(format!(
            "adamw buffer length mismatch: param {}, grad {}, m {}, v {}",
            param.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    assert!(t >= 1, "adamw step counter is 1-based");
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps) + cfg.lr * cfg.weight_decay * param[i];
    }
    Ok(())
}

/// Stateful optimizer owning moment buffers for one network.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, state: &NetworkState) -> Result<Self> {
        cfg.validate()?;
        let shapes: Vec<usize> = state.params().iter().map(|p| p.len()).collect();
        Ok(AdamW {
            cfg,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Override the learning rate; used by schedules (warmup, cosine decay).
    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step(&mut self, state: &mut NetworkState, grads: &ParamGrads) -> Result<()> {
        self.t += 1;
        let mut params = state.params_mut();
        if params.len() != grads.tensors.len() {
            return Err(Error::Config(format!(
                "gradient tensor count {} does not match parameter count {}",
                grads.tensors.len(),
                params.len()
            )));
        }
        for (i, param) in params.iter_mut().enumerate() {
            adamw_step(
                param,
                &grads.tensors[i],
                &mut self.m[i],
                &mut self.v[i],
                &self.cfg,
                self.t,
            )?;
        }
        state.bump_step();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay: wd,
            ..Default::default()
        }
    }

    #[test]
    fn first_step_from_zero_moves_by_about_lr() {
        // with m_hat = g and v_hat = g^2 the first update is -lr*g/(|g|+eps)
        let mut p = vec![0.0];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        adamw_step(&mut p, &[1.0], &mut m, &mut v, &cfg(1e-4, 0.0), 1).unwrap();
        assert!((p[0] + 1e-4).abs() < 1e-9, "p = {}", p[0]);
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_params_unchanged() {
        let mut p = vec![0.3, -1.2];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        adamw_step(&mut p, &[0.0, 0.0], &mut m, &mut v, &cfg(1e-2, 0.0), 1).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn zero_gradient_with_decay_is_pure_shrinkage() {
        let lr = 1e-2;
        let wd = 0.5;
        let mut p = vec![2.0];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        adamw_step(&mut p, &[0.0], &mut m, &mut v, &cfg(lr, wd), 1).unwrap();
        assert!((p[0] - 2.0 * (1.0 - lr * wd)).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_lr_and_bad_betas() {
        let mut bad = AdamWConfig::default();
        bad.lr = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = AdamWConfig::default();
        bad.beta2 = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        let err = adamw_step(&mut p, &[1.0], &mut m, &mut v, &cfg(1e-3, 0.0), 1);
        assert!(err.is_err());
    }

    #[test]
    fn bias_correction_shrinks_over_steps() {
        // late steps with constant gradient approach -lr per step
        let c = cfg(1e-3, 0.0);
        let mut p = vec![0.0];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        for t in 1..=200u64 {
            adamw_step(&mut p, &[0.5], &mut m, &mut v, &c, t).unwrap();
        }
        assert!((p[0] + 200.0 * 1e-3).abs() < 5e-3, "p = {}", p[0]);
    }
}
