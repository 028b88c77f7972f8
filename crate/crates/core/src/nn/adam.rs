//! Bias-corrected Adam.

use super::{Gradients, Network};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Adam hyperparameters; the defaults are the canonical ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators mirroring the parameter tensors,
/// plus the step counter driving bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub(crate) m: Vec<Vec<f64>>,
    pub(crate) v: Vec<Vec<f64>>,
    pub(crate) step: u64,
    pub hyper: AdamParams,
}

impl OptimizerState {
    pub fn for_network(net: &Network, hyper: AdamParams) -> Self {
        let shapes: Vec<usize> = net.param_tensors().iter().map(|t| t.len()).collect();
        OptimizerState {
            m: shapes.iter().map(|&l| vec![0.0; l]).collect(),
            v: shapes.iter().map(|&l| vec![0.0; l]).collect(),
            step: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn from_parts(
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        step: u64,
        hyper: AdamParams,
    ) -> Self {
        OptimizerState { m, v, step, hyper }
    }
}

/// One bias-corrected Adam update of every network parameter in place.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    let grad_tensors = grads.tensors();
    let mut params = net.param_tensors_mut();
    if params.len() != grad_tensors.len()
        || params.len() != state.m.len()
        || params
            .iter()
            .zip(&grad_tensors)
            .zip(&state.m)
            .any(|((p, g), m)| p.len() != g.len() || p.len() != m.len())
    {
        return Err(Error::Shape(
            "optimizer state, gradients, and parameters disagree".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(&grad_tensors)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
        }
    }
    Ok(())
}
