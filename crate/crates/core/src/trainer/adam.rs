//! Adam with bias correction, plus global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::FieldParams;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: FieldParams<T>,
    pub v: FieldParams<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &FieldParams<T>) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    params: &mut FieldParams<T>,
    grads: &FieldParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(invalid("parameter, gradient and moment shapes differ"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(invalid("learning rate must be positive"));
    }
    state.step += 1;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::one() - T::of(state.beta1.powi(state.step as i32));
    let c2 = T::one() - T::of(state.beta2.powi(state.step as i32));
    let (lr, eps) = (T::of(lr), T::of(state.eps));
    let moments = state.m.tensors_mut().zip(state.v.tensors_mut());
    for ((p, g), (m, v)) in params.tensors_mut().zip(grads.tensors()).zip(moments) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut FieldParams<T>, max_norm: f64) -> T {
    let norm = grads.norm();
    let max = T::of(max_norm);
    if norm > max {
        grads.scale(max / norm);
    }
    norm
}
