//! Optimizer: rectified Adam with decoupled weight decay and parameter
//! lookahead, driven by a flat-cosine learning-rate schedule.

use crate::error::{NnError, Result};
use crate::layers::ParamMut;

/// Fraction of the run spent at the maximum learning rate before the cosine
/// decay begins.
pub const FLAT_FRACTION: f64 = 0.72;

pub const LOOKAHEAD_ALPHA: f64 = 0.5;
pub const LOOKAHEAD_EVERY: usize = 6;

#[derive(Debug, Clone)]
pub struct OptimizerParams {
    pub max_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub lookahead_alpha: f64,
    pub lookahead_every: usize,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            max_lr: 0.003,
            beta1: 0.95,
            beta2: 0.999,
            weight_decay: 0.0,
            eps: 1e-8,
            lookahead_alpha: LOOKAHEAD_ALPHA,
            lookahead_every: LOOKAHEAD_EVERY,
        }
    }
}

/// Per-parameter optimizer state. Parameters are identified by visitation
/// order, which is stable for a given model.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub params: OptimizerParams,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    slow: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: OptimizerParams, shapes: &[usize]) -> Self {
        Self {
            params,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            slow: Vec::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One optimizer step over the visited parameters at learning rate `lr`.
    ///
    /// The adaptive term is rectified: while the variance estimate is not yet
    /// trustworthy (rectification term rho_t <= 4) the update falls back to
    /// plain bias-corrected momentum. Weight decay is decoupled from the
    /// gradient. Every `lookahead_every` steps the slow weights absorb half
    /// of the fast weights' progress and the fast weights reset onto them.
    pub fn step(&mut self, lr: f64, mut params: Vec<ParamMut<'_>>) -> Result<()> {
        let p = self.params.clone();
        self.step += 1;
        let t = self.step as f64;
        if self.slow.is_empty() {
            self.slow = params.iter().map(|pm| pm.value.to_vec()).collect();
        }

        let beta1_t = p.beta1.powf(t);
        let beta2_t = p.beta2.powf(t);
        let rho_inf = 2.0 / (1.0 - p.beta2) - 1.0;
        let rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t);
        let rect = if rho_t > 4.0 {
            Some(
                (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        };

        for (idx, pm) in params.iter_mut().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            debug_assert_eq!(m.len(), pm.value.len());
            for i in 0..pm.value.len() {
                let g = pm.grad[i];
                if !g.is_finite() {
                    return Err(NnError::NonFiniteGradient {
                        param: pm.name.clone(),
                    });
                }
                if p.weight_decay != 0.0 {
                    pm.value[i] -= lr * p.weight_decay * pm.value[i];
                }
                m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g;
                v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g * g;
                let m_hat = m[i] / (1.0 - beta1_t);
                let update = match rect {
                    Some(r) => {
                        let v_hat = (v[i] / (1.0 - beta2_t)).sqrt();
                        r * m_hat / (v_hat + p.eps)
                    }
                    None => m_hat,
                };
                pm.value[i] -= lr * update;
            }
        }

        if p.lookahead_every > 0 && self.step % p.lookahead_every == 0 {
            for (idx, pm) in params.iter_mut().enumerate() {
                let slow = &mut self.slow[idx];
                for i in 0..pm.value.len() {
                    slow[i] += p.lookahead_alpha * (pm.value[i] - slow[i]);
                    pm.value[i] = slow[i];
                }
            }
        }
        Ok(())
    }
}

/// Flat-cosine one-cycle schedule: the learning rate holds at `max_lr` for
/// the first `FLAT_FRACTION` of the run, then decays to zero along a half
/// cosine.
pub fn schedule_value(step: usize, total_steps: usize, max_lr: f64) -> f64 {
    schedule_value_with(step, total_steps, max_lr, FLAT_FRACTION)
}

pub fn schedule_value_with(step: usize, total_steps: usize, max_lr: f64, flat_fraction: f64) -> f64 {
    assert!(step < total_steps, "step {step} out of {total_steps}");
    let flat = flat_fraction * total_steps as f64;
    let s = step as f64;
    if s < flat {
        max_lr
    } else {
        let progress = (s - flat) / (total_steps as f64 - flat);
        max_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
