//! Bias-corrected Adam.

use crate::tensor::{Result, Tensor, TensorError};

pub const DEFAULT_BETA1: f32 = 0.9;
pub const DEFAULT_BETA2: f32 = 0.999;
pub const DEFAULT_EPSILON: f32 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamState {
    pub fn new(shape: &[usize], lr: f32) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Applies one Adam update to `param` in place and advances `state.t`.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState) -> Result<()> {
    for (axis, other) in [("grad", grad.shape()), ("m", state.m.shape()), ("v", state.v.shape())] {
        if other != param.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                axis,
                expected: param.len(),
                actual: other.iter().product(),
            });
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = 1.0 - (b1 as f64).powf(state.t as f64);
    let correction2 = 1.0 - (b2 as f64).powf(state.t as f64);
    let step = (state.lr as f64 / correction1) as f32;
    let root2 = correction2.sqrt() as f32;
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        // lr·m̂/(√v̂+ε) with the corrections folded into the scalars
        *p -= step * *m / (v.sqrt() / root2 + state.epsilon);
    }
    if param.data().iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite("adam_step"));
    }
    Ok(())
}
