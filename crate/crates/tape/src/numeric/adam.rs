//! Adam optimizer with bias correction.

use super::{DenseMatrix, Gradients, Params};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f32) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        Self {
            m: params
                .iter()
                .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
                .collect(),
            v: params
                .iter()
                .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
                .collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One optimizer step. Parameters without a gradient are treated as having a
/// zero gradient, so their moments decay but an all-zero state stays put.
pub fn adam_step(params: &mut Params, grads: &Gradients, state: &mut AdamState, cfg: &AdamConfig) {
    state.t += 1;
    let t = state.t as f64;
    let b1 = cfg.beta1 as f64;
    let b2 = cfg.beta2 as f64;
    let bias1 = 1.0 - b1.powf(t);
    let bias2 = 1.0 - b2.powf(t);
    let lr = cfg.learning_rate as f64;
    let eps = cfg.epsilon as f64;

    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let idx = id.index();
        let grad = grads.get(id);
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let p = params.get_mut(id);
        for i in 0..p.data().len() {
            let g = grad.map_or(0.0, |g| g.data()[i] as f64);
            let mi = b1 * m.data()[i] as f64 + (1.0 - b1) * g;
            let vi = b2 * v.data()[i] as f64 + (1.0 - b2) * g * g;
            m.data_mut()[i] = mi as f32;
            v.data_mut()[i] = vi as f32;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            p.data_mut()[i] = (p.data()[i] as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }
    }
}
