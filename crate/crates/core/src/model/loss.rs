use crate::tensor::{Tensor, TensorError};

/// Per-sample distance used by the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    /// `(1 / 2B) * sum_i ||pred_i - gt_i||_2`, the unsquared norm.
    #[default]
    Euclidean,
    /// `(1 / 2B) * sum_i ||pred_i - gt_i||_2^2`, for ablations.
    SquaredEuclidean,
}

/// Loss contribution of one row and its gradient, written into `grad`.
pub(crate) fn row_loss_and_grad(
    kind: LossKind,
    pred: &[f32],
    gt: &[f32],
    batch: usize,
    grad: &mut [f32],
) -> f64 {
    let scale = 2.0 * batch as f64;
    let sq: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let d = p as f64 - g as f64;
            d * d
        })
        .sum();
    match kind {
        LossKind::Euclidean => {
            let norm = sq.sqrt();
            for ((o, &p), &g) in grad.iter_mut().zip(pred).zip(gt) {
                *o = if norm == 0.0 {
                    0.0
                } else {
                    ((p as f64 - g as f64) / (scale * norm)) as f32
                };
            }
            norm / scale
        }
        LossKind::SquaredEuclidean => {
            for ((o, &p), &g) in grad.iter_mut().zip(pred).zip(gt) {
                *o = (2.0 * (p as f64 - g as f64) / scale) as f32;
            }
            sq / scale
        }
    }
}

/// Batch loss for `[B, 2N]` predictions and targets (unsquared norm).
pub fn loss_and_grad(pred: &Tensor, gt: &Tensor) -> Result<(f64, Tensor), TensorError> {
    loss_and_grad_with(LossKind::Euclidean, pred, gt)
}

/// Rows are summed in order, so the result is independent of threading.
pub fn loss_and_grad_with(
    kind: LossKind,
    pred: &Tensor,
    gt: &Tensor,
) -> Result<(f64, Tensor), TensorError> {
    pred.expect_rank("loss pred", 2)?;
    gt.expect_shape("loss gt", pred.shape())?;
    let (b, d) = (pred.shape()[0], pred.shape()[1]);
    let mut grad = Tensor::zeros([b, d]);
    let mut loss = 0.0;
    for (i, g) in grad.data_mut().chunks_exact_mut(d).enumerate() {
        loss += row_loss_and_grad(kind, pred.outer(i), gt.outer(i), b, g);
    }
    Ok((loss, grad))
}
