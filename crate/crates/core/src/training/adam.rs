use serde::{Deserialize, Serialize};

use crate::encoders::Parameters;

/// Bias-corrected first and second moments, flattened in parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }
}

pub fn adam_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    let g = grads.flatten();
    assert_eq!(
        g.len(),
        state.m.len(),
        "optimizer state does not match parameters"
    );
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut offset = 0;
    params.visit_mut(&mut |_, data| {
        for (k, p) in data.iter_mut().enumerate() {
            let idx = offset + k;
            let gi = g[idx];
            state.m[idx] = cfg.beta1 * state.m[idx] + (1.0 - cfg.beta1) * gi;
            state.v[idx] = cfg.beta2 * state.v[idx] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = state.m[idx] / bc1;
            let v_hat = state.v[idx] / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        offset += data.len();
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::CnnParams;

    fn scalar_params(v: f64) -> CnnParams {
        let mut p = CnnParams::zeros(1, 1, 0);
        p.s[[0, 0]] = v;
        p
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = scalar_params(1.5);
        let mut st = AdamState::new(2);
        st.m = vec![0.2, 0.0];
        st.v = vec![0.04, 0.0];
        let before = p.clone();
        let g = scalar_params(0.0);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default());
        // moments decay; with an existing first moment the parameter still moves
        assert!((st.m[0] - 0.18).abs() < 1e-15);
        assert!((st.v[0] - 0.04 * 0.999).abs() < 1e-15);
        let mut fresh = before.clone();
        let mut st0 = AdamState::new(2);
        adam_step(&mut fresh, &g, &mut st0, &AdamConfig::default());
        assert_eq!(fresh, before);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let g = 0.3;
        let mut p = scalar_params(1.0);
        let mut st = AdamState::new(2);
        adam_step(&mut p, &scalar_params(g), &mut st, &cfg);
        // m_hat = g, v_hat = g^2 after bias correction
        let m_hat = (0.1 * g) / (1.0 - 0.9);
        let v_hat = (0.001 * g * g) / (1.0 - 0.999);
        let expected = 1.0 - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.s[[0, 0]] - expected).abs() < 1e-15);
        assert!((p.s[[0, 0]] - (1.0 - 0.01 * g / (g + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr_sign() {
        let cfg = AdamConfig::default();
        let mut p = scalar_params(0.0);
        let mut st = AdamState::new(2);
        let g = scalar_params(-4.0);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p.s[[0, 0]];
            adam_step(&mut p, &g, &mut st, &cfg);
            last = p.s[[0, 0]] - before;
        }
        assert!((last - cfg.learning_rate).abs() < 1e-6, "{last}");
    }
}
