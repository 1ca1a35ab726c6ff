//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moments per parameter, indexed like the parameter set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One AdamW update of the trainable parameters. Non-finite gradients reject
/// the step and leave parameters and state untouched.
pub fn adamw_step(params: &mut ParameterSet, grads: &Gradients, state: &mut AdamWState, cfg: &AdamWConfig) -> Result<()> {
    let ids = params.trainable_ids();
    if !grads.is_finite(&ids) {
        return Err(Error::NonFinite("gradient".into()));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for id in ids {
        let g = grads.param(id).data();
        let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
        let p = params.values_mut(id);
        if g.len() != p.len() || m.len() != p.len() {
            return Err(Error::Shape("gradient shape does not match parameter".into()));
        }
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            p[i] -= cfg.lr * cfg.weight_decay * p[i];
            p[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
