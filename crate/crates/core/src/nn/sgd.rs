use crate::tensor::{Tensor, TensorError};

fn check_lr(lr: f32) -> Result<(), TensorError> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(TensorError::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    Ok(())
}

/// `params -= lr * grads`, elementwise.
pub fn sgd_update(params: &mut Tensor, grads: &Tensor, lr: f32) -> Result<(), TensorError> {
    grads.expect_shape("sgd_update grads", params.shape())?;
    check_lr(lr)?;
    for (p, g) in params.data_mut().iter_mut().zip(grads.data()) {
        *p -= lr * g;
    }
    Ok(())
}

/// Momentum step in the `v = m*v - lr*g; p += v` form. With `momentum == 0`
/// this is exactly [`sgd_update`].
pub fn sgd_momentum_update(
    params: &mut Tensor,
    velocity: &mut Tensor,
    grads: &Tensor,
    lr: f32,
    momentum: f32,
) -> Result<(), TensorError> {
    if momentum == 0.0 {
        return sgd_update(params, grads, lr);
    }
    grads.expect_shape("sgd_momentum_update grads", params.shape())?;
    velocity.expect_shape("sgd_momentum_update velocity", params.shape())?;
    check_lr(lr)?;
    for ((p, v), g) in params
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut())
        .zip(grads.data())
    {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    Ok(())
}
