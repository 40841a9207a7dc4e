use super::params::{ParamGrads, ParamStore};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Cosine annealing from `base_lr` to `min_lr`, restarting after each
/// period; every new period is `multiplier` times longer than the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineRestarts {
    pub base_lr: f64,
    pub min_lr: f64,
    pub period: u64,
    pub multiplier: u64,
}

impl Default for CosineRestarts {
    fn default() -> Self {
        CosineRestarts {
            base_lr: 1e-3,
            min_lr: 1e-5,
            period: 50,
            multiplier: 2,
        }
    }
}

impl CosineRestarts {
    pub fn lr(&self, step: u64) -> f64 {
        let mut t = step;
        let mut p = self.period.max(1);
        while t >= p {
            t -= p;
            p = p.saturating_mul(self.multiplier.max(1));
        }
        let frac = t as f64 / p as f64;
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub schedule: CosineRestarts,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamConfig, schedule: CosineRestarts) -> OptimizerState {
        let zeros: Vec<Vec<f64>> = store.entries().iter().map(|e| vec![0.0; e.tensor.len()]).collect();
        OptimizerState {
            config,
            schedule,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn matches(&self, store: &ParamStore) -> bool {
        self.m.len() == store.len()
            && self.v.len() == store.len()
            && store
                .entries()
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(e, (m, v))| m.len() == e.tensor.len() && v.len() == e.tensor.len())
    }
}

/// One bias-corrected Adam update at learning rate `lr`. Parameters without a
/// gradient are treated as having a zero gradient; buffers are skipped.
pub fn adam_step(store: &mut ParamStore, grads: &ParamGrads, state: &mut OptimizerState, lr: f64) {
    debug_assert!(state.matches(store));
    state.step += 1;
    let AdamConfig { beta1, beta2, eps, .. } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for id in store.ids().collect::<Vec<_>>() {
        if !store.entry(id).trainable {
            continue;
        }
        let g = grads.get(id).map(|g| g.data());
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        for (i, p) in store.get_mut(id).data_mut().iter_mut().enumerate() {
            let gi = g.map_or(0.0, |g| g[i]);
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}
