use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// How the summed squared error is normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossNorm {
    /// `sum((pred - gt)^2) / (2 * batch)`, the classic Euclidean loss.
    #[default]
    Batch,
    /// `sum((pred - gt)^2) / (2 * batch * pixels)`.
    PerPixel,
}

/// Euclidean loss `sum((pred - gt)^2) / (2B)` and its gradient `(pred - gt) / B`.
pub fn l2_loss(pred: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    l2_loss_with(pred, gt, LossNorm::Batch)
}

pub fn l2_loss_with(pred: &Tensor, gt: &Tensor, norm: LossNorm) -> Result<(f64, Tensor)> {
    if pred.shape() != gt.shape() {
        return Err(Error::IncompatibleShapes {
            op: "l2_loss",
            left: pred.shape(),
            right: gt.shape(),
        });
    }
    let s = pred.shape();
    if s.batch == 0 {
        return Err(Error::Empty { what: "l2_loss batch" });
    }
    let denom = match norm {
        LossNorm::Batch => s.batch as f64,
        LossNorm::PerPixel => (s.batch * s.channels * s.plane()) as f64,
    };
    let mut sum = 0.0f64;
    let inv = (1.0 / denom) as f32;
    let grad: Vec<f32> = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let d = p - g;
            sum += d as f64 * d as f64;
            d * inv
        })
        .collect();
    Ok((sum / (2.0 * denom), Tensor::from_vec(s, grad)?))
}
