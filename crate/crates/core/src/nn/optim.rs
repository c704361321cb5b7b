use super::params::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// One bias-corrected Adam update over every parameter, then clears gradients.
///
/// `step` is 1-based.
pub fn adam_step(params: &mut ParamStore, lr: f64, step: u64) {
    let step = step.max(1) as i32;
    let correction1 = 1.0 - BETA1.powi(step);
    let correction2 = 1.0 - BETA2.powi(step);
    for (value, grad, m, v) in params.adam_slots_mut() {
        let g = grad.data();
        for (k, w) in value.data_mut().iter_mut().enumerate() {
            let mk = &mut m.data_mut()[k];
            *mk = BETA1 * *mk + (1.0 - BETA1) * g[k];
            let vk = &mut v.data_mut()[k];
            *vk = BETA2 * *vk + (1.0 - BETA2) * g[k] * g[k];
            let m_hat = *mk / correction1;
            let v_hat = *vk / correction2;
            *w -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
        grad.data_mut().fill(0.0);
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm && norm > 0.0 {
        params.scale_grads(max_norm / norm);
    }
    norm
}
