//! Hybrid Adam: dense Adam for the head, lazy row-wise Adam for the
//! embedding table.
//!
//! A row's moments are created the first time it receives a gradient and are
//! only advanced on steps that touch it. Bias correction for a row uses that
//! row's own update count, so a row updated on steps 1 and 5 follows exactly
//! the trajectory of a dense Adam that saw those two gradients back to back.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::DanModel;
use crate::optim::backward::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// One Adam update of `params` in place. `step` is the 1-based update
    /// count used for bias correction.
    #[inline]
    fn apply(&self, params: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], step: u64) {
        let bc1 = 1.0 - self.beta1.powi(step as i32);
        let bc2 = 1.0 - self.beta2.powi(step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of updates this row has received.
    pub step: u64,
}

/// Optimizer state for one model.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: AdamConfig,
    pub global_step: u64,
    dense_m: Vec<Vec<f64>>,
    dense_v: Vec<Vec<f64>>,
    sparse: HashMap<u32, RowMoments>,
}

impl TrainState {
    pub fn new(model: &DanModel, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = model.dense_params().iter().map(|p| vec![0.0; p.len()]).collect();
        TrainState {
            config,
            global_step: 0,
            dense_v: zeros.clone(),
            dense_m: zeros,
            sparse: HashMap::new(),
        }
    }

    pub fn row_moments(&self, id: u32) -> Option<&RowMoments> {
        self.sparse.get(&id)
    }

    pub fn touched_rows(&self) -> usize {
        self.sparse.len()
    }

    /// Applies one update. Rows absent from `grads` keep their weights and
    /// moments untouched.
    pub fn step(&mut self, model: &mut DanModel, grads: &Gradients) {
        self.global_step += 1;
        let cfg = self.config;
        for (((param, grad), m), v) in model
            .dense_params_mut()
            .into_iter()
            .zip(&grads.dense)
            .zip(&mut self.dense_m)
            .zip(&mut self.dense_v)
        {
            cfg.apply(param, grad, m, v, self.global_step);
        }
        let de = model.embed_dim();
        for (&id, grad) in &grads.embedding {
            let moments = self.sparse.entry(id).or_insert_with(|| RowMoments {
                m: vec![0.0; de],
                v: vec![0.0; de],
                step: 0,
            });
            moments.step += 1;
            cfg.apply(model.row_mut(id), grad, &mut moments.m, &mut moments.v, moments.step);
        }
    }
}
