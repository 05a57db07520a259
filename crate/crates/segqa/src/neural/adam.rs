//! Adam optimizer with bias correction.

use super::params::ParamStore;
use super::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update over every parameter from its accumulated gradient.
/// Gradients are left untouched; callers zero them before the next pass.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, cfg: &AdamConfig) {
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    let one = T::one();
    for p in store.iter_mut() {
        p.step += 1;
        let corr1 = T::from_f64(1.0 - cfg.beta1.powi(p.step as i32));
        let corr2 = T::from_f64(1.0 - cfg.beta2.powi(p.step as i32));
        for i in 0..p.value.numel() {
            let g = p.grad.data()[i];
            let m = b1 * p.m.data()[i] + (one - b1) * g;
            let v = b2 * p.v.data()[i] + (one - b2) * g * g;
            p.m.data_mut()[i] = m;
            p.v.data_mut()[i] = v;
            let m_hat = m / corr1;
            let v_hat = v / corr2;
            p.value.data_mut()[i] = p.value.data()[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
