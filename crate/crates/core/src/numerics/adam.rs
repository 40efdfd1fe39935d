use super::ParamGroup;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Bias-corrected adaptive-moment update over one parameter group.
/// `step` counts from 1. Gradients are cleared afterward.
pub fn adam_update(group: &mut ParamGroup, lr: f64, step: u64) {
    debug_assert!(step >= 1);
    let bc1 = 1.0 - BETA1.powi(step as i32);
    let bc2 = 1.0 - BETA2.powi(step as i32);
    for e in &mut group.entries {
        let g = e.grad.data().to_vec();
        let m = e.m.data_mut();
        for (mi, gi) in m.iter_mut().zip(&g) {
            *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
        }
        let v = e.v.data_mut();
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
        }
        for i in 0..g.len() {
            let m_hat = e.m.data()[i] / bc1;
            let v_hat = e.v.data()[i] / bc2;
            e.value.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
        e.grad.fill(0.0);
    }
    group.step = step;
}
