use serde::{Deserialize, Serialize};

use crate::numerics::Scalar;

/// Hyperparameters of Adam with weight decay folded into the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Moment estimates of one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update, computed in binary64.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let p = params[i].to_f64_lossless();
        let g = grads[i].to_f64_lossless() + cfg.weight_decay * p;
        let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let update = cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
        params[i] = T::lit(p - update);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut p = [0.0f64];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, &AdamConfig::default());
        assert!((p[0] + 1e-4).abs() < 1e-11);
    }

    #[test]
    fn zero_gradient_is_no_op() {
        let mut p = [0.3f64, -2.0];
        let mut s = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default());
        }
        assert_eq!(p, [0.3, -2.0]);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = [1.0f64];
        let mut s = AdamState::new(1);
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        for _ in 0..100 {
            let g = [p[0]];
            adam_step(&mut p, &g, &mut s, &cfg);
        }
        assert!(p[0].abs() < 0.05, "{}", p[0]);
    }

    #[test]
    fn weight_decay_pulls_towards_zero() {
        let mut p = [1.0f64];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[0.0], &mut s, &AdamConfig { weight_decay: 1e-2, ..Default::default() });
        assert!(p[0] < 1.0);
    }
}
