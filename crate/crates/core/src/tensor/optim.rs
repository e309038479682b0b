use super::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor with its gradient and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamState {
    pub value: Tensor,
    pub gradient: Tensor,
    pub velocity: Tensor,
}

impl ParamState {
    pub fn new(value: Tensor) -> Self {
        let zeros = Tensor::zeros(value.shape());
        ParamState {
            value,
            gradient: zeros.clone(),
            velocity: zeros,
        }
    }

    /// Adds `grad` into the accumulated gradient.
    pub fn accumulate(&mut self, grad: &[f32]) -> Result<()> {
        if grad.len() != self.gradient.len() {
            return Err(Error::DimensionMismatch {
                op: "ParamState::accumulate",
                dim: "gradient length",
                expected: self.gradient.len(),
                actual: grad.len(),
            });
        }
        for (g, &d) in self.gradient.data_mut().iter_mut().zip(grad) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.gradient.data_mut().fill(0.0);
    }
}

/// One SGD-with-momentum step:
/// `velocity = momentum * velocity - lr * gradient; value += velocity`,
/// then the gradient is cleared.
pub fn sgd_update(name: &str, state: &mut ParamState, lr: f32, momentum: f32) -> Result<()> {
    if lr.is_nan() || lr < 0.0 {
        return Err(Error::invalid("sgd_update", format!("learning rate {lr} must be >= 0")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::invalid("sgd_update", format!("momentum {momentum} outside [0, 1)")));
    }
    if !state.gradient.all_finite() {
        return Err(Error::NonFiniteGradient { name: name.to_string() });
    }
    let ParamState {
        value,
        gradient,
        velocity,
    } = state;
    for ((v, x), &g) in velocity
        .data_mut()
        .iter_mut()
        .zip(value.data_mut())
        .zip(gradient.data())
    {
        *v = momentum * *v - lr * g;
        *x += *v;
    }
    gradient.data_mut().fill(0.0);
    Ok(())
}
